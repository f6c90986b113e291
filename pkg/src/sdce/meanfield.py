"""KL and 2-Wasserstein kernels and the Gaussian-family collapse flow."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from sdce import kernels
from sdce.kernels import FlowStepError
from sdce.market import ShapeError

__all__ = [
    "GaussianMeasure",
    "EmpiricalMeasure",
    "FlowState",
    "FlowStepError",
    "kl_gaussian",
    "w2_gaussian",
    "w2_empirical",
    "flow_potential",
    "flow_gradient",
    "flow_step",
    "run_flow",
    "iterate_generations",
]


@dataclass(frozen=True)
class GaussianMeasure:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"std must be positive, got {self.std}")

    def sample(self, rng, n: int) -> "EmpiricalMeasure":
        return EmpiricalMeasure(rng.normal(self.mean, self.std, size=n))


@dataclass(frozen=True)
class EmpiricalMeasure:
    samples: np.ndarray

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=np.float64).ravel())
        if s.size == 0:
            raise ValueError("empirical measure needs at least one sample")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)


@dataclass(frozen=True)
class FlowState:
    current: GaussianMeasure
    previous: GaussianMeasure
    target: GaussianMeasure
    rho: float
    step: float

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if not self.step > 0:
            raise ValueError("step must be positive")


def kl_gaussian(q: GaussianMeasure, p: GaussianMeasure) -> float:
    r = q.std / p.std
    z = (q.mean - p.mean) / p.std
    # log1p/expm1-free form is accurate enough; clip the -0.0 artefacts
    return max(-math.log(r) + 0.5 * (r * r + z * z) - 0.5, 0.0)


def w2_gaussian(a: GaussianMeasure, b: GaussianMeasure) -> float:
    return math.hypot(a.mean - b.mean, a.std - b.std)


def w2_empirical(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact 1-D W2 through the sorted (quantile) coupling."""
    if a.samples.shape != b.samples.shape:
        raise ShapeError("empirical W2 needs equal sample counts; resample first")
    d = a.samples - b.samples
    return float(np.sqrt(np.mean(d * d)))


def flow_potential(q: GaussianMeasure, state: FlowState) -> float:
    return (1.0 - state.rho) * kl_gaussian(q, state.target) + state.rho * kl_gaussian(q, state.previous)


def flow_gradient(q: GaussianMeasure, state: FlowState) -> tuple[float, float]:
    """Gradient of the drift potential in (mean, std) coordinates."""
    p, a, rho = state.target, state.previous, state.rho
    ip, ia = 1.0 / p.std**2, 1.0 / a.std**2
    g_mu = (1 - rho) * (q.mean - p.mean) * ip + rho * (q.mean - a.mean) * ia
    g_sig = (1 - rho) * (q.std * ip - 1 / q.std) + rho * (q.std * ia - 1 / q.std)
    return g_mu, g_sig


def flow_step(state: FlowState) -> GaussianMeasure:
    return run_flow(state, 1)


def run_flow(state: FlowState, nsteps: int) -> GaussianMeasure:
    """``nsteps`` explicit Euler steps from ``state.current`` (anchors held fixed)."""
    q, a, p = state.current, state.previous, state.target
    mu, sig = kernels.gaussian_flow(q.mean, q.std, p.mean, p.std, a.mean, a.std, state.rho, state.step, int(nsteps))
    return GaussianMeasure(mu, sig)


def iterate_generations(
    q0: GaussianMeasure,
    p: GaussianMeasure,
    rho: float,
    generations: int,
    steps_per_gen: int,
    step: float,
    anchor_shrink: float = 0.0,
) -> list[GaussianMeasure]:
    """Endpoints of ``generations`` flow segments, each anchored on the last.

    ``anchor_shrink`` narrows the anchor before each segment, modelling the
    tail loss of data emitted by the previous generation (0 = faithful).
    The initial anchor is ``q0`` itself.
    """
    if generations < 1:
        raise ValueError("generations must be at least 1")
    out = []
    q = q0
    for _ in range(generations):
        anchor = GaussianMeasure(q.mean, q.std * (1.0 - anchor_shrink))
        q = run_flow(FlowState(q, anchor, p, rho, step), steps_per_gen)
        out.append(q)
    return out
