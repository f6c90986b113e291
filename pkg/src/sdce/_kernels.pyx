# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; signatures mirror ``_kernels_py``.

Only the loop-bound kernels live here. Elementwise ones (Cobb-Douglas,
softmax) are already vectorized in numpy and come from the reference module.
"""
import numpy as np

from libc.math cimport INFINITY, exp, log

from sdce._kernels_py import FlowStepError

BACKEND = "cython"


cdef inline double _cd_log(double lH, double lS, double coef, double g, double d) nogil:
    # lH, lS are logs of the inputs, -inf at zero; 0^0 = 1 by convention
    cdef double e = 0.0
    if g != 0.0:
        if lH == -INFINITY:
            return 0.0
        e += g * lH
    if d != 0.0:
        if lS == -INFINITY:
            return 0.0
        e += d * lS
    return coef * exp(e)


cdef inline double _log0(double x) nogil:
    return log(x) if x > 0.0 else -INFINITY


def loo_matrix(cells, phi, double unit, double coef, double gamma, double delta):
    cdef const double[:, ::1] G = np.ascontiguousarray(cells, dtype=np.float64)
    cdef const double[::1] f = np.ascontiguousarray(phi, dtype=np.float64)
    cdef Py_ssize_t nc = G.shape[0], n = G.shape[1], c, i
    out = np.zeros((nc, n))
    cdef double[:, ::1] o = out
    cdef double H, S, full, b, hw, sw
    with nogil:
        for c in range(nc):
            H = 0.0
            S = 0.0
            for i in range(n):
                H += G[c, i] * unit * f[i]
                S += G[c, i] * unit * (1.0 - f[i])
            full = _cd_log(_log0(H), _log0(S), coef, gamma, delta)
            for i in range(n):
                b = G[c, i] * unit
                if b == 0.0:
                    continue
                hw = H - b * f[i]
                sw = S - b * (1.0 - f[i])
                if hw < 0.0:
                    hw = 0.0
                if sw < 0.0:
                    sw = 0.0
                o[c, i] = full - _cd_log(_log0(hw), _log0(sw), coef, gamma, delta)
    return out


def price_gradients(base_logits, cells, double unit, double inv_temp, loo,
                    double weight, h):
    cdef const double[::1] z = np.ascontiguousarray(base_logits, dtype=np.float64)
    cdef const double[:, ::1] G = np.ascontiguousarray(cells, dtype=np.float64)
    cdef const double[:, ::1] L = np.ascontiguousarray(loo, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t nc = G.shape[0], n = G.shape[1], c, i
    out = np.empty(n)
    cdef double[::1] o = out
    w0_arr = np.empty(nc)
    cdef double[::1] w0 = w0_arr
    cdef double k, m, gmax, x, eu_f, ed_f
    cdef double mu_, md, wu, wd, su, sd, eu, ed, zu, zd
    with nogil:
        m = z[0]
        for c in range(nc):
            if z[c] > m:
                m = z[c]
        for c in range(nc):
            w0[c] = exp(z[c] - m)
        for i in range(n):
            k = unit * inv_temp * hv[i]
            gmax = 0.0
            for c in range(nc):
                if G[c, i] > gmax:
                    gmax = G[c, i]
            su = 0.0
            sd = 0.0
            eu = 0.0
            ed = 0.0
            if k * gmax < 300.0:
                # shared softmax base; cells without producer i keep weight w0
                for c in range(nc):
                    x = G[c, i]
                    if x == 0.0:
                        wu = w0[c]
                        wd = wu
                    else:
                        eu_f = exp(-k * x)
                        wu = w0[c] * eu_f
                        wd = w0[c] / eu_f
                    su += wu
                    sd += wd
                    eu += wu * L[c, i]
                    ed += wd * L[c, i]
            else:
                mu_ = -1e300
                md = -1e300
                for c in range(nc):
                    zu = z[c] - k * G[c, i]
                    zd = z[c] + k * G[c, i]
                    if zu > mu_:
                        mu_ = zu
                    if zd > md:
                        md = zd
                for c in range(nc):
                    wu = exp(z[c] - k * G[c, i] - mu_)
                    wd = exp(z[c] + k * G[c, i] - md)
                    su += wu
                    sd += wd
                    eu += wu * L[c, i]
                    ed += wd * L[c, i]
            o[i] = weight * (eu / su - ed / sd) / (2.0 * hv[i])
    return out


def gaussian_flow(double mu, double sigma, double mu_p, double sigma_p,
                  double mu_a, double sigma_a, double rho, double dt, long nsteps):
    cdef double wp = 1.0 - rho
    cdef double ip = 1.0 / (sigma_p * sigma_p)
    cdef double ia = 1.0 / (sigma_a * sigma_a)
    cdef double g_mu, g_sig
    cdef long k
    for k in range(nsteps):
        if not dt < 0.5 * sigma:
            raise FlowStepError(f"step {dt} not below sigma/2 = {0.5 * sigma}")
        g_mu = wp * (mu - mu_p) * ip + rho * (mu - mu_a) * ia
        g_sig = wp * (sigma * ip - 1.0 / sigma) + rho * (sigma * ia - 1.0 / sigma)
        mu = mu - dt * g_mu
        sigma = sigma - dt * g_sig
        if sigma <= 0.0:
            raise FlowStepError("Euler step drove sigma to a nonpositive value")
    return mu, sigma
