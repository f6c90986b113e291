"""Reference numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature. The two are checked against each other in the test suite.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"


class FlowStepError(ValueError):
    """An explicit Euler step would leave the stable region (sigma too small)."""


def cobb_douglas(H, S, coef, gamma, delta):
    """Vectorised ``coef * H**gamma * S**delta`` with ``0**0 == 1``."""
    H = np.asarray(H, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    return coef * np.power(H, gamma) * np.power(S, delta)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    w = np.exp(z)
    return w / w.sum()


def loo_matrix(cells, phi, unit, coef, gamma, delta):
    """Leave-one-out quality gains for every grid cell and producer.

    ``out[c, i] = Q(cell c) - Q(cell c with producer i removed)``.
    """
    cells = np.asarray(cells, dtype=np.float64) * unit
    phi = np.asarray(phi, dtype=np.float64)
    H = cells @ phi
    S = cells @ (1.0 - phi)
    full = cobb_douglas(H, S, coef, gamma, delta)
    H_wo = H[:, None] - cells * phi[None, :]
    S_wo = S[:, None] - cells * (1.0 - phi)[None, :]
    # guard tiny negative round-off before the power
    np.maximum(H_wo, 0.0, out=H_wo)
    np.maximum(S_wo, 0.0, out=S_wo)
    wo = cobb_douglas(H_wo, S_wo, coef, gamma, delta)
    out = full[:, None] - wo
    out[cells == 0.0] = 0.0
    return out


def price_gradients(base_logits, cells, unit, inv_temp, loo, weight, h):
    """Central differences of the expected leave-one-out gain in each own price.

    ``base_logits`` are the policy logits at the current prices; raising
    producer ``i``'s price by ``h`` lowers the logit of cell ``c`` by
    ``h[i] * unit * cells[c, i] * inv_temp``. Returns a length-N vector of
    ``d/dp_i  weight * E_pi[loo[:, i]]``.
    """
    h = np.asarray(h, dtype=np.float64)
    base = np.asarray(base_logits, dtype=np.float64)[:, None]
    shift = np.asarray(cells, dtype=np.float64) * (unit * inv_temp) * h[None, :]
    e_up = _column_expectation(base - shift, loo)
    e_down = _column_expectation(base + shift, loo)
    return weight * (e_up - e_down) / (2.0 * h)


def _column_expectation(z, values):
    z = z - z.max(axis=0, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=0, keepdims=True)
    return (w * values).sum(axis=0)


def gaussian_flow(mu, sigma, mu_p, sigma_p, mu_a, sigma_a, rho, dt, nsteps):
    """Explicit Euler integration of the mixed-KL gradient flow in (mu, sigma).

    The potential is ``(1-rho) KL(q||p) + rho KL(q||a)``; the 1-D Gaussian
    family is flat in W2 so its Wasserstein gradient is the Euclidean
    gradient in (mu, sigma).
    """
    wp = 1.0 - rho
    ip = 1.0 / (sigma_p * sigma_p)
    ia = 1.0 / (sigma_a * sigma_a)
    for _ in range(int(nsteps)):
        if not dt < 0.5 * sigma:
            raise FlowStepError(f"step {dt} not below sigma/2 = {0.5 * sigma}")
        g_mu = wp * (mu - mu_p) * ip + rho * (mu - mu_a) * ia
        g_sig = wp * (sigma * ip - 1.0 / sigma) + rho * (sigma * ia - 1.0 / sigma)
        mu = mu - dt * g_mu
        sigma = sigma - dt * g_sig
        if sigma <= 0.0:
            raise FlowStepError("Euler step drove sigma to a nonpositive value")
    return mu, sigma
