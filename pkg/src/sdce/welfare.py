"""Welfare decomposition and closed-form policy instruments."""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from sdce.market import ElasticitySchedule, MarketState, human_synth_split, production_quality, shapley_compensation
from sdce.meanfield import GaussianMeasure, kl_gaussian


class PolicyKind(str, Enum):
    NONE = "none"
    SUBSIDY = "subsidy"
    DISCLOSURE = "disclosure"
    ROYALTY_CAP = "royalty_cap"
    TRANSFER = "transfer"
    WATERMARK = "watermark"


class PolicyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.NONE
    kappa: float = 0.85
    lambda_pen: float = 0.30
    psi: float = 0.5
    cap: float = 0.05
    transfer: float = 0.01
    disclosure_rho_scale: float = 0.68

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", PolicyKind(self.kind))
        except ValueError:
            raise PolicyConfigError(f"unknown policy kind {self.kind!r}") from None
        if not self.kappa > 0:
            raise PolicyConfigError("kappa must be positive")
        if self.lambda_pen < 0:
            raise PolicyConfigError("lambda_pen must be nonnegative")
        if not 0.0 < self.psi <= 1.0:
            raise PolicyConfigError("psi must lie in (0, 1]")
        if self.cap < 0 or self.transfer < 0:
            raise PolicyConfigError("cap and transfer must be nonnegative")
        if not 0.0 <= self.disclosure_rho_scale <= 1.0:
            raise PolicyConfigError("disclosure_rho_scale must lie in [0, 1]")


@dataclass(frozen=True)
class WelfareBreakdown:
    producer_surplus: float
    consumer_surplus: float
    collapse_loss: float
    info_loss: float

    def __post_init__(self):
        if self.collapse_loss < 0 or self.info_loss < 0:
            raise ValueError("loss components must be nonnegative")

    @property
    def total(self) -> float:
        return self.producer_surplus + self.consumer_surplus - self.collapse_loss - self.info_loss

    @classmethod
    def mean(cls, items) -> "WelfareBreakdown":
        items = list(items)
        return cls(
            float(np.mean([w.producer_surplus for w in items])),
            float(np.mean([w.consumer_surplus for w in items])),
            float(np.mean([w.collapse_loss for w in items])),
            float(np.mean([w.info_loss for w in items])),
        )


def collapse_loss(q: GaussianMeasure, p: GaussianMeasure, kappa: float) -> float:
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return kappa * kl_gaussian(q, p)


def info_loss(rho: float, lambda_pen: float) -> float:
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    if lambda_pen < 0:
        raise ValueError("lambda_pen must be nonnegative")
    return lambda_pen * rho * (1.0 - rho)


def welfare_decompose(
    market: MarketState,
    sched: ElasticitySchedule,
    q: GaussianMeasure,
    p: GaussianMeasure,
    policy: PolicyConfig,
    payments=None,
) -> WelfareBreakdown:
    """Producer surplus, consumer surplus and the two losses at the market's rho.

    ``payments`` overrides the leave-one-out compensation (used by the
    royalty and no-compensation baselines).
    """
    if payments is None:
        payments = shapley_compensation(market, sched)
    w_prod = float(np.sum(payments))
    prices = market.prices
    w_cons = 0.0
    for t in market.trainers:
        H, S = human_synth_split(t.bundle, market.producers)
        w_cons += t.quality_price * production_quality(t, H, S, market.rho, sched) - float(prices @ t.bundle)
    return WelfareBreakdown(
        w_prod,
        w_cons,
        collapse_loss(q, p, policy.kappa),
        info_loss(market.rho, policy.lambda_pen),
    )


def optimal_subsidy(q: GaussianMeasure, p: GaussianMeasure, kappa: float) -> float:
    """Per-unit human-data subsidy ``KL(q||p) / (2 kappa)``."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return kl_gaussian(q, p) / (2.0 * kappa)


def optimal_watermark(q: GaussianMeasure, p: GaussianMeasure, kappa: float, psi: float) -> float:
    """Watermark strength ``(1 - psi) KL(q||p) / (2 kappa psi)``."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if not 0.0 < psi <= 1.0:
        raise ValueError("psi must lie in (0, 1]")
    return (1.0 - psi) * kl_gaussian(q, p) / (2.0 * kappa * psi)


@dataclass(frozen=True)
class PolicyEffect:
    """Per-generation modifications the learning loop applies.

    subsidy      per-unit payment on human volume added to trainer payoffs
    rho_scale    multiplier on the contamination seen by the elasticities
    price_cap    upper bound on posted prices (``inf`` = none)
    transfer     lump sum added to each producer's compensation
    """

    subsidy: float = 0.0
    rho_scale: float = 1.0
    price_cap: float = float("inf")
    transfer: float = 0.0

    def schedule(self, sched: ElasticitySchedule) -> ElasticitySchedule:
        if self.rho_scale == 1.0:
            return sched
        # gamma(s*rho) and delta(s*rho) for affine maps are slope rescalings
        return replace(
            sched,
            human_slope=sched.human_slope * self.rho_scale,
            synth_slope=sched.synth_slope * self.rho_scale,
        )

    def clamp_prices(self, prices: np.ndarray) -> np.ndarray:
        return np.minimum(prices, self.price_cap)

    @property
    def is_identity(self) -> bool:
        return self == PolicyEffect()


def apply_policy(policy: PolicyConfig, q: GaussianMeasure, p: GaussianMeasure) -> PolicyEffect:
    """Translate a policy into this generation's effect given the current drift."""
    kind = policy.kind
    if kind is PolicyKind.NONE:
        return PolicyEffect()
    if kind is PolicyKind.SUBSIDY:
        return PolicyEffect(subsidy=optimal_subsidy(q, p, policy.kappa))
    if kind is PolicyKind.DISCLOSURE:
        return PolicyEffect(rho_scale=policy.disclosure_rho_scale)
    if kind is PolicyKind.ROYALTY_CAP:
        return PolicyEffect(price_cap=policy.cap)
    if kind is PolicyKind.TRANSFER:
        return PolicyEffect(transfer=policy.transfer)
    if kind is PolicyKind.WATERMARK:
        return PolicyEffect(subsidy=policy.psi * optimal_watermark(q, p, policy.kappa, policy.psi))
    raise PolicyConfigError(f"unknown policy kind {kind!r}")
