"""Static market primitives: contamination accounting, production, payoffs,
leave-one-out compensation and equilibrium residuals.

Everything here is a pure function of immutable inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from sdce import kernels


class DegenerateInputError(ValueError):
    """Raised when a quantity is undefined for the given inputs."""


class ShapeError(ValueError):
    pass


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ProducerState:
    id: int
    provenance: float
    volume: float = 0.0
    price: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.provenance <= 1.0:
            raise ValueError(f"provenance must lie in [0, 1], got {self.provenance}")
        if self.volume < 0 or self.price < 0:
            raise ValueError("volume and price must be nonnegative")


@dataclass(frozen=True)
class TrainerState:
    id: int
    bundle: np.ndarray
    labor: float = 1.0
    capital: float = 1.0
    revenue_weight: float = 1.0
    quality_price: float = 1.0

    def __post_init__(self):
        b = _frozen(self.bundle)
        if b.ndim != 1 or np.any(b < 0):
            raise ValueError("bundle must be a vector of nonnegative entries")
        object.__setattr__(self, "bundle", b)
        for name in ("labor", "capital", "revenue_weight", "quality_price"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def with_bundle(self, bundle) -> "TrainerState":
        return replace(self, bundle=bundle)


@dataclass(frozen=True)
class ElasticitySchedule:
    """Contamination-dependent Cobb-Douglas exponents.

    ``gamma(rho) = human_base + human_slope * rho`` and
    ``delta(rho) = max(synth_base - synth_slope * rho, 0)``. The default
    slopes are the calibrated values used by the replication commands.
    """

    scale: float = 1.0
    labor_exp: float = 0.3
    capital_exp: float = 0.3
    human_base: float = 0.18
    human_slope: float = 0.06255
    synth_base: float = 0.12
    synth_slope: float = 0.12501

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not (0 <= self.labor_exp < 1 and 0 <= self.capital_exp < 1):
            raise ValueError("labor and capital exponents must lie in [0, 1)")
        if self.human_slope < 0 or self.synth_slope < 0:
            raise ValueError("elasticity slopes must be nonnegative")
        if self.human_base < 0 or self.synth_base < 0:
            raise ValueError("base elasticities must be nonnegative")
        for rho in (0.0, 1.0):
            total = self.labor_exp + self.capital_exp + self.gamma(rho) + self.delta(rho)
            if total > 1.0 + 1e-12:
                raise ValueError(f"exponent sum {total:.4f} exceeds 1 at rho={rho}")

    def gamma(self, rho: float) -> float:
        return self.human_base + self.human_slope * rho

    def delta(self, rho: float) -> float:
        return max(self.synth_base - self.synth_slope * rho, 0.0)

    @property
    def collapse_rate(self) -> float:
        """Per-generation log-quality loss per unit of squared self-consumption.

        Equal to the total elasticity shift ``gamma' - delta'``.
        """
        return self.human_slope + self.synth_slope

    def coef(self, trainer: TrainerState) -> float:
        return self.scale * trainer.labor**self.labor_exp * trainer.capital**self.capital_exp


@dataclass(frozen=True)
class MarketState:
    producers: tuple
    trainers: tuple
    rho: float
    generation: int = 0

    def __post_init__(self):
        object.__setattr__(self, "producers", tuple(self.producers))
        object.__setattr__(self, "trainers", tuple(self.trainers))
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.generation < 0:
            raise ValueError("generation must be nonnegative")
        n = len(self.producers)
        for t in self.trainers:
            if t.bundle.shape != (n,):
                raise ShapeError(f"trainer {t.id} bundle has shape {t.bundle.shape}, expected ({n},)")
        vol = sum(p.volume for p in self.producers)
        if vol > 0 and abs(contamination_ratio(self.producers) - self.rho) > 1e-9:
            raise ValueError("rho is inconsistent with producer volumes")

    @property
    def provenance(self) -> np.ndarray:
        return np.array([p.provenance for p in self.producers])

    @property
    def prices(self) -> np.ndarray:
        return np.array([p.price for p in self.producers])

    @property
    def volumes(self) -> np.ndarray:
        return np.array([p.volume for p in self.producers])

    @property
    def bundles(self) -> np.ndarray:
        return np.array([t.bundle for t in self.trainers]).reshape(len(self.trainers), len(self.producers))


def build_market(provenance, volumes, prices, bundles, generation=0, trainer_kwargs=None) -> MarketState:
    """Assemble a consistent MarketState from arrays (rho from the supplied volumes)."""
    producers = tuple(
        ProducerState(i, float(f), float(v), float(p))
        for i, (f, v, p) in enumerate(zip(provenance, volumes, prices))
    )
    kw = trainer_kwargs or {}
    trainers = tuple(TrainerState(j, b, **kw) for j, b in enumerate(np.atleast_2d(bundles)))
    rho = contamination_ratio(producers) if sum(volumes) > 0 else 0.0
    return MarketState(producers, trainers, rho, generation)


def contamination_ratio(producers: Sequence[ProducerState]) -> float:
    """Volume-weighted synthetic share of aggregate supply."""
    h = np.array([p.volume for p in producers], dtype=np.float64)
    total = h.sum()
    if not total > 0:
        raise DegenerateInputError("contamination ratio is undefined for zero total volume")
    phi = np.array([p.provenance for p in producers])
    # summing the synthetic volume directly keeps the all-human and
    # all-synthetic cases exact (0 and 1, not 1 - 0.999...)
    rho = float(np.sum(h * (1.0 - phi))) / total
    return min(max(rho, 0.0), 1.0)


def human_synth_split(bundle, producers: Sequence[ProducerState]) -> tuple[float, float]:
    b = np.asarray(bundle, dtype=np.float64)
    if b.shape != (len(producers),):
        raise ShapeError(f"bundle length {b.shape} does not match {len(producers)} producers")
    phi = np.array([p.provenance for p in producers])
    return float(b @ phi), float(b @ (1.0 - phi))


def production_quality(trainer: TrainerState, H: float, S: float, rho: float, sched: ElasticitySchedule) -> float:
    if H < 0 or S < 0:
        raise ValueError("factor inputs must be nonnegative")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    return float(kernels.cobb_douglas(H, S, sched.coef(trainer), sched.gamma(rho), sched.delta(rho)))


def trainer_stage_payoff(
    trainer: TrainerState,
    producers: Sequence[ProducerState],
    rho: float,
    sched: ElasticitySchedule,
    subsidy: float = 0.0,
) -> float:
    """``P_Q * Q - sum_i p_i b_i + subsidy * H`` for the current bundle."""
    H, S = human_synth_split(trainer.bundle, producers)
    q = production_quality(trainer, H, S, rho, sched)
    prices = np.array([p.price for p in producers])
    return trainer.quality_price * q - float(prices @ trainer.bundle) + subsidy * H


def grid_payoffs(trainer, provenance, prices, rho, sched, grid, subsidy=0.0) -> np.ndarray:
    """Stage payoff of every bundle in ``grid`` (rows are bundles in volume units)."""
    grid = np.asarray(grid, dtype=np.float64)
    phi = np.asarray(provenance, dtype=np.float64)
    H = grid @ phi
    S = grid @ (1.0 - phi)
    q = kernels.cobb_douglas(H, S, sched.coef(trainer), sched.gamma(rho), sched.delta(rho))
    return trainer.quality_price * q - grid @ np.asarray(prices, dtype=np.float64) + subsidy * H


def shapley_compensation(market: MarketState, sched: ElasticitySchedule) -> np.ndarray:
    """Revenue-weighted leave-one-out quality contribution of each producer."""
    phi = market.provenance
    gamma, delta = sched.gamma(market.rho), sched.delta(market.rho)
    pay = np.zeros(len(market.producers))
    for t in market.trainers:
        loo = kernels.loo_matrix(t.bundle[None, :], phi, 1.0, sched.coef(t), gamma, delta)[0]
        pay += t.revenue_weight * loo
    return pay


def clearing_residual(market: MarketState, target_supplies) -> float:
    target = np.asarray(target_supplies, dtype=np.float64)
    if target.shape != (len(market.producers),):
        raise ShapeError("target supplies must have one entry per producer")
    if not market.trainers:
        return float(np.abs(target).max(initial=0.0))
    demand = market.bundles.sum(axis=0)
    return float(np.abs(demand - target).max(initial=0.0))


def best_deviation_gain(market: MarketState, sched: ElasticitySchedule, deviation_grid, subsidy: float = 0.0) -> float:
    """Largest stage-payoff gain any trainer gets by switching to a grid bundle."""
    grid = np.asarray(deviation_grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] == 0:
        raise ValueError("deviation grid must be a nonempty (cells x N) array")
    phi, prices = market.provenance, market.prices
    best = 0.0
    for t in market.trainers:
        current = trainer_stage_payoff(t, market.producers, market.rho, sched, subsidy)
        alt = grid_payoffs(t, phi, prices, market.rho, sched, grid, subsidy).max()
        best = max(best, float(alt - current))
    return best


def epsilon_sdce_residual(
    market: MarketState,
    sched: ElasticitySchedule,
    deviation_grid,
    subsidy: float = 0.0,
    target_supplies=None,
) -> float:
    """max(best unilateral grid improvement, clearing gap); zero at a grid equilibrium.

    Producer volumes are the committed supplies unless ``target_supplies`` is given.
    """
    target = market.volumes if target_supplies is None else target_supplies
    return max(best_deviation_gain(market, sched, deviation_grid, subsidy), clearing_residual(market, target))


def mixed_profile_residual(payoffs, probs, demand, supplies) -> float:
    """Residual of a mixed bundle profile on a finite grid.

    ``payoffs`` is (M, cells) stage payoffs, ``probs`` the (M, cells) policy.
    The deviation part is each trainer's exploitability, best cell payoff
    minus expected payoff; the clearing part compares expected demand with
    committed supplies.
    """
    u = np.atleast_2d(np.asarray(payoffs, dtype=np.float64))
    pi = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if u.shape != pi.shape:
        raise ShapeError("payoffs and probabilities must have the same shape")
    gain = float(np.max(u.max(axis=1) - np.sum(pi * u, axis=1)))
    gap = float(np.abs(np.asarray(demand, dtype=np.float64) - np.asarray(supplies, dtype=np.float64)).max(initial=0.0))
    return max(gain, gap, 0.0)


def bundle_grid(n_producers: int, levels: int = 5, cap: int = 6, unit: float = 1.0,
                max_cells: int = 4096, rng=None) -> np.ndarray:
    """Per-producer quantity grid ``{0..levels-1} * unit`` with total at most ``cap`` units.

    Small markets get the full enumeration (lexicographic order). When the
    capped grid would exceed ``max_cells`` a seeded uniform sample of
    compositions is drawn instead, always including the empty bundle.
    """
    top = levels - 1
    count = _capped_count(n_producers, top, cap)
    if count <= max_cells:
        cells = _enumerate_capped(n_producers, top, cap)
    else:
        if rng is None:
            raise ValueError("grid too large to enumerate; pass an rng to sample it")
        cells = _sample_capped(n_producers, top, cap, max_cells, rng)
    return cells.astype(np.float64) * unit


def _capped_count(n, top, cap):
    # ways[k] = number of vectors over the first i coordinates summing to k
    ways = np.zeros(cap + 1, dtype=object)
    ways[0] = 1
    for _ in range(n):
        nxt = np.zeros_like(ways)
        for k in range(cap + 1):
            for v in range(min(top, k) + 1):
                nxt[k] += ways[k - v]
        ways = nxt
    return int(ways.sum())


def _enumerate_capped(n, top, cap):
    out = []
    row = [0] * n

    def rec(i, left):
        if i == n:
            out.append(tuple(row))
            return
        for v in range(min(top, left) + 1):
            row[i] = v
            rec(i + 1, left - v)
        row[i] = 0

    rec(0, cap)
    return np.array(out, dtype=np.int64)


def _sample_capped(n, top, cap, k, rng):
    cells = {tuple([0] * n)}
    while len(cells) < k:
        total = int(rng.integers(1, cap + 1))
        vec = np.zeros(n, dtype=np.int64)
        for _ in range(total):
            i = int(rng.integers(n))
            if vec[i] < top:
                vec[i] += 1
        cells.add(tuple(vec))
    return np.array(sorted(cells), dtype=np.int64)
