"""Collapse-rate regressions: OLS, Newey-West HAC errors, the Cramer-Rao check."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np


class SingularDesignError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Pooled (t, rho, outcome) cells; ``order`` fixes the sequence HAC lags run along."""

    t: np.ndarray
    rho: np.ndarray
    outcome: np.ndarray
    order: Optional[np.ndarray] = None

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64).ravel()
        rho = np.asarray(self.rho, dtype=np.float64).ravel()
        y = np.asarray(self.outcome, dtype=np.float64).ravel()
        if not (t.size == rho.size == y.size) or t.size == 0:
            raise ValueError("t, rho and outcome must be nonempty and of equal length")
        if np.any(t < 0):
            raise ValueError("generations must be nonnegative")
        if np.any((rho < 0) | (rho > 1)):
            raise ValueError("rho must lie in [0, 1]")
        order = np.lexsort((t, rho)) if self.order is None else np.asarray(self.order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(t.size)):
            raise ValueError("order must be a permutation of the row indices")
        for name, arr in (("t", t), ("rho", rho), ("outcome", y), ("order", order)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return self.t.size

    def ordered(self) -> "Dataset":
        """Rows permuted into lag order (the new order is the identity)."""
        o = self.order
        return Dataset(self.t[o], self.rho[o], self.outcome[o], np.arange(len(self)))


def collapse_regressor(t, rho):
    return np.asarray(t, dtype=np.float64) * np.asarray(rho, dtype=np.float64) ** 2


@dataclass(frozen=True)
class FitResult:
    intercept: float
    slope: float
    r_squared: float
    residuals: np.ndarray
    regressor: np.ndarray
    se_hac: Optional[float] = None
    lag_used: Optional[int] = None

    @property
    def t_stat(self) -> float:
        if self.se_hac is None:
            raise ValueError("no standard error attached")
        return self.slope / self.se_hac if self.se_hac > 0 else math.copysign(math.inf, self.slope)

    def as_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "slope": self.slope,
            "se_hac": self.se_hac,
            "r_squared": self.r_squared,
            "lag_used": self.lag_used,
            "n": int(self.residuals.size),
        }


def ols_fit(data: Dataset, regressor: Callable = collapse_regressor) -> FitResult:
    """Least squares of outcome on an intercept and ``regressor(t, rho)``.

    Rows are taken in the dataset's lag order, so residuals line up with
    the sequence used by ``hac_se``.
    """
    d = data.ordered()
    if len(d) < 3:
        raise ValueError("need at least 3 rows")
    x = np.asarray(regressor(d.t, d.rho), dtype=np.float64)
    y = d.outcome
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if not sxx > 0 or sxx <= 1e-24 * max(float(x @ x), 1.0):
        raise SingularDesignError("regressor has zero variance")
    yc = y - y.mean()
    b = float(xc @ yc) / sxx
    a = float(y.mean() - b * x.mean())
    resid = y - a - b * x
    sst = float(yc @ yc)
    if sst == 0.0:
        warnings.warn("outcome has zero variance; R^2 set to 0", RuntimeWarning, stacklevel=2)
        r2 = 0.0
    else:
        r2 = min(max(1.0 - float(resid @ resid) / sst, 0.0), 1.0)
    resid.setflags(write=False)
    x.setflags(write=False)
    return FitResult(a, b, r2, resid, x)


def newey_west_lag(n: int) -> int:
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def hac_se(fit: FitResult, lag: Optional[int] = None) -> float:
    """Newey-West standard error of the slope with Bartlett weights.

    ``lag=None`` uses the automatic bandwidth ``floor(4 (n/100)^(2/9))``.
    Lag 0 is White's heteroskedasticity-robust estimator.
    """
    u = fit.residuals
    n = u.size
    lag = newey_west_lag(n) if lag is None else int(lag)
    if lag < 0 or lag >= n:
        raise ValueError(f"lag must lie in [0, {n - 1}], got {lag}")
    X = np.column_stack([np.ones(n), fit.regressor])
    g = X * u[:, None]
    S = g.T @ g
    for l in range(1, lag + 1):
        w = 1.0 - l / (lag + 1.0)
        G = g[l:].T @ g[:-l]
        S += w * (G + G.T)
    bread = np.linalg.inv(X.T @ X)
    V = bread @ S @ bread
    return float(math.sqrt(max(V[1, 1], 0.0)))


def with_hac(fit: FitResult, lag: Optional[int] = None) -> FitResult:
    n = fit.residuals.size
    used = newey_west_lag(n) if lag is None else int(lag)
    return replace(fit, se_hac=hac_se(fit, used), lag_used=used)


def scaling_fit(t, rho, quality_ratio) -> FitResult:
    """Log-quality decay law; ``slope`` is the collapse rate b (positive when Q decays)."""
    q = np.asarray(quality_ratio, dtype=np.float64)
    if np.any(~(q > 0)):
        raise DomainError("quality ratios must be positive")
    fit = ols_fit(Dataset(t, rho, np.log(q)))
    fit = with_hac(fit)
    return replace(fit, slope=-fit.slope)


def reduced_form_fit(data: Dataset, lag: Optional[int] = None) -> FitResult:
    """OLS of log perplexity on t*rho^2 with HAC errors; slope is b as estimated."""
    return with_hac(ols_fit(data), lag)


# the pooled benchmark design: five contamination levels by ten generations
BENCH_RHO = (0.1, 0.3, 0.5, 0.7, 0.9)
BENCH_T = tuple(range(1, 11))


def synthetic_perplexity(rng, b: float = 0.183, sigma_u: float = 0.05, a0: float = math.log(20.0),
                         rho_values=BENCH_RHO, t_values=BENCH_T) -> Dataset:
    """Log perplexity ``a0 + b t rho^2 + u`` with i.i.d. Gaussian noise, rows ordered by (rho, t)."""
    rr, tt = np.meshgrid(np.asarray(rho_values, float), np.asarray(t_values, float), indexing="ij")
    t, rho = tt.ravel(), rr.ravel()
    u = rng.normal(0.0, sigma_u, size=t.size) if sigma_u > 0 else np.zeros(t.size)
    return Dataset(t, rho, a0 + b * t * rho**2 + u)


def fisher_crlb(sigma_o: float, T: int) -> float:
    """Cramer-Rao bound ``sigma_o^2 / T`` for a Gaussian location parameter."""
    if not sigma_o > 0:
        raise ValueError("sigma_o must be positive")
    if T < 1:
        raise ValueError("T must be at least 1")
    return sigma_o * sigma_o / T


def sample_mean_variance(rng, sigma_o: float, T: int, reps: int, location: float = 0.0) -> float:
    """Monte-Carlo variance of the sample-mean location estimator."""
    draws = rng.normal(location, sigma_o, size=(reps, T))
    return float(np.var(draws.mean(axis=1), ddof=1))
