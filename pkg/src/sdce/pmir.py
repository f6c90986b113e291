"""Market-coupled iterative retraining loop.

One run simulates ``horizon + 1`` model generations (0..horizon). Each
generation is a block of market rounds; every round executes, in order:
bundle sampling, quality, leave-one-out compensation, contamination update,
drift-penalised reward shaping, replay storage, critic and policy updates,
and producer price updates. Between generations the generative drift probe
advances one flow segment and the self-consumption lineage decays model
fidelity.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from sdce import kernels
from sdce.market import (
    ElasticitySchedule,
    MarketState,
    ProducerState,
    TrainerState,
    bundle_grid,
    contamination_ratio,
    epsilon_sdce_residual,
    mixed_profile_residual,
    shapley_compensation,
)
from sdce.meanfield import FlowState, GaussianMeasure, run_flow, w2_empirical, w2_gaussian
from sdce.welfare import PolicyConfig, PolicyEffect, WelfareBreakdown, apply_policy, welfare_decompose


class ConfigError(ValueError):
    pass


class Regime(str, Enum):
    PMIR = "pmir"
    B1 = "b1"  # unregulated open scraping
    B2 = "b2"  # flat statutory royalty
    B3 = "b3"  # leave-one-out compensation only


@dataclass(frozen=True)
class PmirConfig:
    n_producers: int = 8
    n_trainers: int = 2
    horizon: int = 10
    discount: float = 0.99
    learning_rate: float = 3e-4
    beta_shape: float = 0.10
    epsilon_explore: float = 0.05
    seed: int = 17
    stream: int = 0
    # bundle grid
    grid_levels: int = 5
    grid_cap: int = 6
    grid_unit: float = 1.0
    max_cells: int = 4096
    # learning schedule
    rounds_per_generation: int = 40
    temperature_start: float = 0.05
    temperature_end: float = 0.005
    buffer_capacity: int = 256
    batch_size: int = 16
    price_updates: bool = True
    supply_adjustment: float = 0.5
    # market primitives
    initial_price: float = 0.08
    royalty: float = 0.15
    human_share: float = 0.25
    forced_rho: Optional[float] = None
    quality_price: float = 1.0
    labor: float = 1.0
    capital: float = 1.0
    revenue_weight: float = 1.0
    # generative drift probe
    target_mean: float = 0.0
    target_std: float = 1.0
    drift_shrink: float = 0.4
    flow_time: float = 1.0
    flow_step: float = 0.02
    w2_mode: str = "gaussian"
    probe_samples: int = 256

    def __post_init__(self):
        if self.n_producers < 1 or self.n_trainers < 1 or self.horizon < 1:
            raise ConfigError("N, M and T must be positive")
        if not 0.0 < self.discount < 1.0:
            raise ConfigError("discount must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.beta_shape < 0:
            raise ConfigError("beta_shape must be nonnegative")
        if not 0.0 < self.epsilon_explore < 1.0:
            raise ConfigError("epsilon_explore must lie in (0, 1)")
        if self.grid_levels < 2 or self.grid_cap < 1 or not self.grid_unit > 0:
            raise ConfigError("grid needs >= 2 levels, a positive cap and a positive unit")
        if self.rounds_per_generation < 1:
            raise ConfigError("rounds_per_generation must be positive")
        if not 0 < self.temperature_end <= self.temperature_start:
            raise ConfigError("temperatures must satisfy 0 < end <= start")
        if not 0.0 < self.supply_adjustment <= 1.0:
            raise ConfigError("supply_adjustment must lie in (0, 1]")
        if self.buffer_capacity < 1 or self.batch_size < 1:
            raise ConfigError("buffer capacity and batch size must be positive")
        if self.initial_price < 0 or self.royalty < 0:
            raise ConfigError("prices must be nonnegative")
        if not 0.0 <= self.human_share <= 1.0:
            raise ConfigError("human_share must lie in [0, 1]")
        if self.forced_rho is not None and not 0.0 <= self.forced_rho <= 1.0:
            raise ConfigError("forced_rho must lie in [0, 1]")
        if not self.target_std > 0:
            raise ConfigError("target_std must be positive")
        if not 0.0 <= self.drift_shrink < 1.0:
            raise ConfigError("drift_shrink must lie in [0, 1)")
        if not (self.flow_time > 0 and self.flow_step > 0):
            raise ConfigError("flow_time and flow_step must be positive")
        if self.w2_mode not in ("gaussian", "empirical"):
            raise ConfigError("w2_mode must be 'gaussian' or 'empirical'")


# --------------------------------------------------------------------------
# learning components


@dataclass(frozen=True)
class Transition:
    rho_before: float
    prices: np.ndarray
    bundles: np.ndarray
    shaped_rewards: np.ndarray
    rho_after: float


class ReplayBuffer:
    """Bounded FIFO of transitions; the oldest entry is evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.transitions: deque = deque(maxlen=capacity)

    def __len__(self):
        return len(self.transitions)

    def push(self, tr: Transition) -> None:
        self.transitions.append(tr)

    def sample(self, rng, k: int) -> list:
        idx = rng.integers(len(self.transitions), size=min(k, len(self.transitions)))
        return [self.transitions[i] for i in idx]


def critic_features(rho: float, prices) -> np.ndarray:
    p = np.asarray(prices, dtype=np.float64)
    return np.array([1.0, rho, p.sum() / p.size, rho * rho])


@dataclass(frozen=True)
class CriticParams:
    weights: np.ndarray  # (M, 4)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if not np.all(np.isfinite(w)):
            raise ValueError("critic weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, n_trainers: int) -> "CriticParams":
        return cls(np.zeros((n_trainers, 4)))

    def value(self, features: np.ndarray) -> np.ndarray:
        return self.weights @ features


def td_update(critic: CriticParams, batch, discount: float, lr: float) -> CriticParams:
    """One semi-gradient step on the mean squared TD error of a linear critic."""
    if not batch:
        raise ValueError("batch must be nonempty")
    w = critic.weights
    X = np.array([critic_features(tr.rho_before, tr.prices) for tr in batch])  # (B, 4)
    X_next = X.copy()
    after = np.array([tr.rho_after for tr in batch])
    X_next[:, 1], X_next[:, 3] = after, after * after
    R = np.array([tr.shaped_rewards for tr in batch])  # (B, M)
    td = R + discount * (X_next @ w.T) - X @ w.T
    grad = td.T @ X
    return CriticParams(w + lr * grad / len(batch))


@dataclass(frozen=True)
class BundlePolicy:
    """Softmax over grid cells: ``softmax(logits_j + payoff_j / temperature)``."""

    logits: np.ndarray  # (M, cells)
    temperature: float

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    def probabilities(self, j: int, payoffs: np.ndarray) -> np.ndarray:
        return kernels.softmax(self.logits[j] + payoffs / self.temperature)


def reward_shaping(raw_reward, q_next, q_curr, beta_shape: float):
    """Subtract ``beta * W2(q_next, q_curr)``; works for Gaussian or empirical measures."""
    if beta_shape < 0:
        raise ValueError("beta_shape must be nonnegative")
    if beta_shape == 0:
        return raw_reward
    d = w2_gaussian(q_next, q_curr) if isinstance(q_next, GaussianMeasure) else w2_empirical(q_next, q_curr)
    return raw_reward - beta_shape * d


def fd_step_size(price: float) -> float:
    return 1e-3 * max(price, 1.0)


def price_step(producer: ProducerState, payment_fn: Callable[[float], float], lr: float, epsilon: float, rng) -> float:
    """One epsilon-greedy ascent step on the producer's expected compensation.

    ``payment_fn(p)`` returns the producer's expected compensation if it
    posted price ``p`` with everything else (including the trainers' bundle
    policies) held fixed, so the finite difference captures demand response.
    """
    p = producer.price
    if epsilon > 0 and rng.random() < epsilon:
        return max(p * (1.0 + rng.uniform(-0.1, 0.1)), 0.0)
    if lr == 0:
        return p
    h = fd_step_size(p)
    grad = (payment_fn(p + h) - payment_fn(p - h)) / (2.0 * h)
    return max(p + lr * grad, 0.0)


# --------------------------------------------------------------------------
# run record


@dataclass(frozen=True)
class GenerationRow:
    generation: int
    rho: float
    quality: float
    quality_rel: float
    w2_drift: float
    w2_target: float
    welfare: WelfareBreakdown
    residual: float
    mean_price: float
    subsidy: float
    fidelity: float


@dataclass
class PmirRecord:
    regime: str
    policy: str
    seed: int
    rows: list = field(default_factory=list)
    round_rho: list = field(default_factory=list)
    round_residual: list = field(default_factory=list)
    final_prices: Optional[np.ndarray] = None
    provenance: Optional[np.ndarray] = None

    def row(self, t: int) -> GenerationRow:
        return self.rows[t]

    def as_arrays(self) -> dict:
        return {
            "rho": np.array([r.rho for r in self.rows]),
            "quality": np.array([r.quality for r in self.rows]),
            "quality_rel": np.array([r.quality_rel for r in self.rows]),
            "welfare": np.array([r.welfare.total for r in self.rows]),
            "residual": np.array([r.residual for r in self.rows]),
            "round_residual": np.array(self.round_residual),
            "round_rho": np.array(self.round_rho),
        }


def residual_trace(record: PmirRecord, per: str = "generation") -> np.ndarray:
    if per == "generation":
        return np.array([r.residual for r in record.rows])
    if per == "round":
        return np.array(record.round_residual)
    raise ValueError("per must be 'generation' or 'round'")


def smoothed(trace, window: int = 50) -> np.ndarray:
    x = np.asarray(trace, dtype=np.float64)
    if x.size < window:
        raise ValueError("trace shorter than the smoothing window")
    c = np.cumsum(np.insert(x, 0, 0.0))
    return (c[window:] - c[:-window]) / window


# --------------------------------------------------------------------------
# the loop


def run_streams(seed: int, stream: int = 0):
    """Independent child generators for one run.

    The run's entropy is ``SeedSequence([seed, stream])``; its five spawned
    children drive provenance draws, bundle sampling, producer exploration,
    replay minibatches and the empirical drift probe, in that order. Runs that share ``(seed, stream)``
    share random numbers, which pairs comparisons across regimes.
    """
    ss = np.random.SeedSequence([int(seed), int(stream)])
    return [np.random.default_rng(s) for s in ss.spawn(5)]


def draw_provenance(cfg: PmirConfig, rng) -> np.ndarray:
    n = cfg.n_producers
    if cfg.forced_rho is not None:
        return np.full(n, 1.0 - cfg.forced_rho)
    n_h = int(round(cfg.human_share * n))
    if cfg.human_share > 0:
        n_h = max(n_h, 1)
    human = rng.uniform(0.85, 1.0, size=n_h)
    synth = rng.uniform(0.0, 0.15, size=n - n_h)
    return np.concatenate([human, synth])


def _flow_generation(q: GaussianMeasure, target: GaussianMeasure, rho: float, cfg: PmirConfig) -> GaussianMeasure:
    anchor = GaussianMeasure(q.mean, q.std * (1.0 - cfg.drift_shrink))
    s_min = min(q.std, anchor.std, target.std)
    dt = min(cfg.flow_step, 0.25 * s_min, 0.25 * s_min * s_min)
    steps = max(1, math.ceil(cfg.flow_time / dt))
    return run_flow(FlowState(q, anchor, target, rho, cfg.flow_time / steps), steps)


def _regime_settings(cfg: PmirConfig, regime: Regime):
    if regime is Regime.PMIR:
        return dict(price=cfg.initial_price, learn_prices=cfg.price_updates, beta=cfg.beta_shape,
                    compensation="shapley", uniform=False)
    if regime is Regime.B3:
        return dict(price=cfg.initial_price, learn_prices=False, beta=0.0, compensation="shapley", uniform=False)
    if regime is Regime.B2:
        return dict(price=cfg.royalty, learn_prices=False, beta=0.0, compensation="royalty", uniform=False)
    if regime is Regime.B1:
        return dict(price=0.0, learn_prices=False, beta=0.0, compensation="none", uniform=True)
    raise ConfigError(f"unknown regime {regime!r}")


def pmir_run(
    cfg: PmirConfig,
    sched: ElasticitySchedule,
    policy: PolicyConfig = PolicyConfig(),
    regime: Regime | str = Regime.PMIR,
) -> PmirRecord:
    regime = Regime(regime)
    rs = _regime_settings(cfg, regime)
    rng_prov, rng_bundle, rng_price, rng_replay, rng_probe = run_streams(cfg.seed, cfg.stream)

    N, M = cfg.n_producers, cfg.n_trainers
    phi = draw_provenance(cfg, rng_prov)
    grid = bundle_grid(N, cfg.grid_levels, cfg.grid_cap, cfg.grid_unit, cfg.max_cells, rng_prov)
    units = grid / cfg.grid_unit
    H_c, S_c = grid @ phi, grid @ (1.0 - phi)
    n_cells = grid.shape[0]

    trainer_kw = dict(labor=cfg.labor, capital=cfg.capital, revenue_weight=cfg.revenue_weight,
                      quality_price=cfg.quality_price)
    proto = TrainerState(0, np.zeros(N), **trainer_kw)
    P_Q = cfg.quality_price
    target = GaussianMeasure(cfg.target_mean, cfg.target_std)
    uniform_bundle = np.full(N, cfg.grid_cap * cfg.grid_unit / N)

    prices = np.full(N, rs["price"], dtype=np.float64)
    theta = np.zeros((M, n_cells))
    critic = CriticParams.zeros(M)
    buffer = ReplayBuffer(cfg.buffer_capacity)

    supply = np.ones(N)  # producers open with equal volume
    rho = contamination_ratio([ProducerState(i, phi[i], supply[i]) for i in range(N)])
    q = target
    fidelity = 1.0
    prev_gen_rho = None
    total_rounds = (cfg.horizon + 1) * cfg.rounds_per_generation
    temps = cfg.temperature_start * (cfg.temperature_end / cfg.temperature_start) ** (
        np.arange(total_rounds) / max(total_rounds - 1, 1)
    )

    rec = PmirRecord(regime=regime.value, policy=policy.kind.value, seed=cfg.seed, provenance=phi)
    shaping_cache: dict = {}
    k = 0
    q_ref = None

    for t in range(cfg.horizon + 1):
        effect: PolicyEffect = apply_policy(policy, q, target)
        prices = effect.clamp_prices(prices)
        sched_t = effect.schedule(replace(sched, scale=sched.scale * fidelity))
        coef = sched_t.coef(proto)
        s = effect.subsidy
        gen_rho, gen_quality, gen_welfare, gen_resid = [], [], [], []

        for _ in range(cfg.rounds_per_generation):
            tau = float(temps[k])
            gamma, delta = sched_t.gamma(rho), sched_t.delta(rho)
            q_cells = kernels.cobb_douglas(H_c, S_c, coef, gamma, delta)
            payoff = P_Q * q_cells - grid @ prices + s * H_c

            # --- bundle sampling and quality
            if rs["uniform"]:
                bundles = np.tile(uniform_bundle, (M, 1))
                mean_bundles = bundles
                Hb, Sb = bundles @ phi, bundles @ (1.0 - phi)
                quality = kernels.cobb_douglas(Hb, Sb, coef, gamma, delta)
                exp_quality = float(quality.mean())
                probs = actions = logits = None
            else:
                logits = theta + payoff[None, :] / tau
                probs = np.array([kernels.softmax(logits[j]) for j in range(M)])
                actions = np.array([_sample(rng_bundle, probs[j]) for j in range(M)])
                bundles = grid[actions]
                mean_bundles = probs @ grid
                quality = q_cells[actions]
                exp_quality = float((probs @ q_cells).mean())

            market = MarketState(
                tuple(ProducerState(i, phi[i], supply[i], prices[i]) for i in range(N)),
                tuple(TrainerState(j, b, **trainer_kw) for j, b in enumerate(bundles)),
                rho,
                t,
            )

            # --- compensation
            sales = bundles.sum(axis=0)
            if rs["compensation"] == "shapley":
                pay = shapley_compensation(market, sched_t) + effect.transfer
            elif rs["compensation"] == "royalty":
                pay = prices * sales + effect.transfer
            else:
                pay = np.full(N, effect.transfer)

            gen_welfare.append(welfare_decompose(market, sched_t, q, target, policy, payments=pay))

            # --- equilibrium residual of the current profile
            demand = mean_bundles.sum(axis=0)
            if rs["uniform"]:
                resid = epsilon_sdce_residual(market, sched_t, grid, subsidy=s)
            else:
                resid = mixed_profile_residual(np.tile(payoff, (M, 1)), probs, demand, supply)
            gen_resid.append(resid)
            rec.round_residual.append(resid)
            rec.round_rho.append(rho)
            gen_rho.append(rho)
            gen_quality.append(exp_quality)

            # --- contamination update: supply moves part way toward expected demand
            supply_next = supply + cfg.supply_adjustment * (demand - supply)
            if not supply_next.sum() > 0:
                supply_next = supply
            rho_next = contamination_ratio([ProducerState(i, phi[i], supply_next[i]) for i in range(N)])

            # --- shaping and storage
            raw = P_Q * quality - bundles @ prices + s * (bundles @ phi)
            if rs["beta"] > 0:
                key = round(rho_next, 12)
                if key not in shaping_cache:
                    q_next = _flow_generation(q, target, rho_next, cfg)
                    if cfg.w2_mode == "empirical":
                        d = w2_empirical(q_next.sample(rng_probe, cfg.probe_samples),
                                         q.sample(rng_probe, cfg.probe_samples))
                    else:
                        d = w2_gaussian(q_next, q)
                    shaping_cache[key] = d
                shaped = raw - rs["beta"] * shaping_cache[key]
            else:
                shaped = raw
            x_now = critic_features(rho, prices)
            buffer.push(Transition(rho, prices.copy(), bundles.copy(), np.asarray(shaped, dtype=float), rho_next))

            # --- critic and policy updates
            if not rs["uniform"]:
                batch = buffer.sample(rng_replay, cfg.batch_size)
                critic = td_update(critic, batch, cfg.discount, cfg.learning_rate)
                adv = shaped - critic.value(x_now)
                for j in range(M):
                    g = -probs[j]
                    g[actions[j]] += 1.0
                    theta[j] += cfg.learning_rate * adv[j] * g

            # --- producer price updates
            if rs["learn_prices"]:
                loo = kernels.loo_matrix(units, phi, cfg.grid_unit, coef, gamma, delta)
                h = np.array([fd_step_size(p) for p in prices])
                grad = np.zeros(N)
                for j in range(M):
                    grad += kernels.price_gradients(logits[j], units, cfg.grid_unit, 1.0 / tau, loo,
                                                    cfg.revenue_weight, h)
                explore = rng_price.random(N) < cfg.epsilon_explore
                jumps = rng_price.uniform(-0.1, 0.1, size=N)
                new = np.where(explore, prices * (1.0 + jumps), prices + cfg.learning_rate * grad)
                prices = effect.clamp_prices(np.maximum(new, 0.0))

            supply = supply_next
            rho = rho_next
            k += 1

        # --- generation bookkeeping
        rho_bar = float(np.mean(gen_rho))
        q_next = _flow_generation(q, target, rho_bar, cfg)
        quality_bar = float(np.mean(gen_quality))
        if q_ref is None:
            q_ref = quality_bar
        rec.rows.append(GenerationRow(
            generation=t,
            rho=rho_bar,
            quality=quality_bar,
            quality_rel=quality_bar / q_ref if q_ref > 0 else float("nan"),
            w2_drift=w2_gaussian(q_next, q),
            w2_target=w2_gaussian(q, target),
            welfare=WelfareBreakdown.mean(gen_welfare),
            residual=float(np.mean(gen_resid)),
            mean_price=float(prices.mean()),
            subsidy=s,
            fidelity=fidelity,
        ))
        # self-consumption lineage: the next model trains on this generation's
        # synthetic share, emitted by a model that saw the previous share
        lag = rho_bar if prev_gen_rho is None else prev_gen_rho
        fidelity *= math.exp(-sched.collapse_rate * rho_bar * lag)
        prev_gen_rho = rho_bar
        q = q_next
        shaping_cache.clear()

    rec.final_prices = prices.copy()
    return rec


def _sample(rng, probs: np.ndarray) -> int:
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return min(idx, probs.size - 1)
