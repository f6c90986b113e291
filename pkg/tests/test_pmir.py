import dataclasses
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdce.harness.emit import csv_text, record_rows
from sdce.market import ElasticitySchedule, ProducerState
from sdce.meanfield import GaussianMeasure as G, w2_gaussian
from sdce.pmir import (
    ConfigError,
    CriticParams,
    PmirConfig,
    Regime,
    ReplayBuffer,
    Transition,
    BundlePolicy,
    critic_features,
    fd_step_size,
    pmir_run,
    price_step,
    residual_trace,
    reward_shaping,
    run_streams,
    smoothed,
    td_update,
)
from sdce.welfare import PolicyConfig, PolicyKind

SCHED = ElasticitySchedule()


@lru_cache(maxsize=None)
def run(seed=17, regime="pmir", kind="none", **kw):
    return pmir_run(PmirConfig(seed=seed, **kw), SCHED, PolicyConfig(kind=kind), Regime(regime))


def serial(rec, run_id="x"):
    return csv_text(record_rows(rec, run_id))


# components

def test_config_validation():
    for bad in (dict(discount=1.0), dict(discount=0.0), dict(learning_rate=0), dict(epsilon_explore=0),
                dict(beta_shape=-1), dict(forced_rho=1.5), dict(temperature_end=1.0), dict(w2_mode="x"),
                dict(supply_adjustment=0), dict(n_producers=0), dict(drift_shrink=1.0)):
        with pytest.raises(ConfigError):
            PmirConfig(**bad)


def test_reward_shaping_examples():
    q = G(0.2, 1.1)
    assert reward_shaping(1.3, q, q, 0.1) == 1.3
    assert reward_shaping(1.0, G(0.5, 1), G(0, 1), 0.10) == pytest.approx(0.95, abs=1e-15)
    assert reward_shaping(0.7, G(5, 3), G(0, 1), 0.0) == 0.7
    with pytest.raises(ValueError):
        reward_shaping(1.0, q, q, -0.1)


def _tr(rho, prices, reward, rho_after):
    return Transition(rho, np.asarray(prices, float), np.zeros((1, 2)), np.asarray(reward, float), rho_after)


def test_td_update_examples():
    c = CriticParams.zeros(2)
    batch = [_tr(0.3, [0.1, 0.2], [0.0, 0.0], 0.4)]
    assert np.array_equal(td_update(c, batch, 0.9, 0.1).weights, c.weights)
    c2 = CriticParams(np.arange(8.0).reshape(2, 4) / 10)
    batch = [_tr(0.3, [0.1, 0.2], [1.0, -0.5], 0.4)]
    assert np.array_equal(td_update(c2, batch, 0.9, 0.0).weights, c2.weights)
    # gamma = 0, one transition: a least-squares gradient step toward the reward
    x = critic_features(0.3, [0.1, 0.2])
    lr = 0.05
    expected = c2.weights + lr * np.outer(np.array([1.0, -0.5]) - c2.weights @ x, x)
    np.testing.assert_allclose(td_update(c2, batch, 0.0, lr).weights, expected, rtol=1e-15)


def test_td_update_matches_per_transition_loop(rng):
    c = CriticParams(rng.normal(size=(3, 4)))
    batch = [_tr(rng.uniform(), rng.uniform(size=4), rng.normal(size=3), rng.uniform()) for _ in range(7)]
    grad = np.zeros((3, 4))
    for tr in batch:
        x = critic_features(tr.rho_before, tr.prices)
        xn = critic_features(tr.rho_after, tr.prices)
        grad += np.outer(tr.shaped_rewards + 0.99 * c.weights @ xn - c.weights @ x, x)
    np.testing.assert_allclose(td_update(c, batch, 0.99, 0.01).weights, c.weights + 0.01 * grad / 7, rtol=1e-13)
    with pytest.raises(ValueError):
        td_update(c, [], 0.9, 0.1)


@given(st.integers(1, 20), st.integers(0, 60))
def test_replay_buffer_fifo(cap, n):
    buf = ReplayBuffer(cap)
    for i in range(n):
        buf.push(_tr(0.0, [0.0], [float(i)], 0.0))
        assert len(buf) <= cap
    kept = [int(tr.shaped_rewards[0]) for tr in buf.transitions]
    assert kept == list(range(max(0, n - cap), n))


def test_replay_sample_on_small_buffer(rng):
    buf = ReplayBuffer(4)
    buf.push(_tr(0.0, [0.0], [1.0], 0.0))
    assert len(buf.sample(rng, 16)) == 1
    with pytest.raises(ValueError):
        ReplayBuffer(0)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(1e-3, 10))
def test_bundle_policy_is_a_distribution(payoffs, temp):
    u = np.array(payoffs)
    pol = BundlePolicy(np.zeros((1, u.size)), temp)
    p = pol.probabilities(0, u)
    assert (p >= 0).all() and abs(p.sum() - 1.0) <= 1e-12


def test_bundle_policy_validation():
    with pytest.raises(ValueError):
        BundlePolicy(np.zeros((1, 3)), 0.0)
    with pytest.raises(ValueError):
        BundlePolicy(np.array([[np.inf, 0.0]]), 1.0)


def test_price_step_examples(rng):
    prod = ProducerState(0, 1.0, 1.0, 0.3)
    assert price_step(prod, lambda p: p * np.exp(-p), 0.0, 0.0, rng) == 0.3
    assert price_step(prod, lambda p: 2.0, 0.5, 0.0, rng) == 0.3
    assert fd_step_size(0.2) == 1e-3 and fd_step_size(4.0) == 4e-3
    jumps = [price_step(prod, lambda p: 0.0, 0.1, 0.999, np.random.default_rng(i)) for i in range(50)]
    assert all(0.27 - 1e-12 <= x <= 0.33 + 1e-12 for x in jumps) and len(set(jumps)) > 1


def test_monopolist_price_ascent_approaches_grid_optimum(rng):
    # revenue p * D(p) with downward-sloping demand D(p) = exp(-p)
    pay = lambda p: p * np.exp(-p)
    grid = np.linspace(0, 3, 30001)
    best = grid[np.argmax(pay(grid))]
    p = 0.2
    for _ in range(400):
        nxt = price_step(ProducerState(0, 1.0, 1.0, p), pay, 0.5, 0.0, rng)
        assert pay(nxt) >= pay(p) * (1 - 1e-12)
        p = nxt
    assert p == pytest.approx(best, abs=1e-3)


def test_run_streams_are_independent_and_reproducible():
    a = [g.random(4) for g in run_streams(17, 0)]
    b = [g.random(4) for g in run_streams(17, 0)]
    c = [g.random(4) for g in run_streams(17, 1)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not any(np.array_equal(x, y) for x, y in zip(a, c))
    assert len({tuple(x) for x in a}) == 5


def test_smoothed_moving_average():
    x = np.arange(10.0)
    np.testing.assert_allclose(smoothed(x, 4), [1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5])
    with pytest.raises(ValueError):
        smoothed(x, 11)


# whole runs

def test_determinism_byte_identical():
    a = pmir_run(PmirConfig(seed=53, horizon=3), SCHED)
    b = pmir_run(PmirConfig(seed=53, horizon=3), SCHED)
    assert serial(a) == serial(b)
    assert np.array_equal(a.round_residual, b.round_residual)
    c = pmir_run(PmirConfig(seed=54, horizon=3), SCHED)
    assert serial(a) != serial(c)


def test_record_shape():
    r = run()
    cfg = PmirConfig()
    assert [row.generation for row in r.rows] == list(range(cfg.horizon + 1))
    assert len(r.round_residual) == (cfg.horizon + 1) * cfg.rounds_per_generation
    assert r.rows[0].quality_rel == 1.0
    assert all(0 <= x <= 1 for x in r.round_rho)
    assert (residual_trace(r) >= 0).all() and (residual_trace(r, "round") >= 0).all()
    with pytest.raises(ValueError):
        residual_trace(r, "epoch")


def test_fully_human_market_has_no_contamination():
    r = pmir_run(PmirConfig(forced_rho=0.0, horizon=4), SCHED)
    assert all(x == 0.0 for x in r.round_rho)
    assert all(row.fidelity == 1.0 for row in r.rows)
    # no synthetic input at all: with a positive synthetic elasticity the
    # Cobb-Douglas quality is identically zero, so the trajectory is flat
    q = np.array([row.quality for row in r.rows])
    assert np.all(q == q[0])


def test_pmir_without_shaping_or_price_learning_is_b3():
    kw = dict(seed=31, horizon=4)
    a = pmir_run(PmirConfig(beta_shape=0.0, price_updates=False, **kw), SCHED, regime=Regime.PMIR)
    b = pmir_run(PmirConfig(**kw), SCHED, regime=Regime.B3)
    assert serial(a) == serial(b)
    assert a.round_residual == b.round_residual


def test_nonbinding_royalty_cap_is_identity():
    kw = dict(seed=42, horizon=4)
    a = pmir_run(PmirConfig(**kw), SCHED, PolicyConfig())
    b = pmir_run(PmirConfig(**kw), SCHED, PolicyConfig(kind="royalty_cap", cap=10.0))
    assert float(np.max(a.final_prices)) < 10.0
    assert serial(a, "r") == serial(b, "r").replace("royalty_cap", "none")


def test_subsidy_on_undrifted_market_is_identity():
    # at forced rho = 0 the probe never drifts, so s* = 0 every generation
    kw = dict(seed=42, horizon=3, forced_rho=0.0)
    a = pmir_run(PmirConfig(**kw), SCHED, PolicyConfig())
    b = pmir_run(PmirConfig(**kw), SCHED, PolicyConfig(kind="subsidy"))
    assert all(row.subsidy == 0 for row in b.rows)
    assert serial(a, "r") == serial(b, "r").replace("subsidy", "none")


def test_subsidy_improves_quality_and_lowers_contamination():
    u, s = run(17), run(17, kind="subsidy")
    assert u.rows[-1].quality_rel < s.rows[-1].quality_rel
    assert u.rows[-1].rho > s.rows[-1].rho


def test_regime_ordering_single_seed():
    q = {g: run(17, g).rows[-1].quality for g in ("pmir", "b3", "b2", "b1")}
    assert q["pmir"] >= q["b3"] >= q["b2"] >= q["b1"]


def test_drift_probe_tracks_contamination():
    r = run()
    assert all(row.w2_drift >= 0 for row in r.rows)
    assert r.rows[-1].w2_target > 0
    clean = pmir_run(PmirConfig(forced_rho=0.0, horizon=2), SCHED)
    assert all(row.w2_target == 0 for row in clean.rows)


def test_empirical_w2_mode_runs():
    r = pmir_run(PmirConfig(horizon=2, w2_mode="empirical", probe_samples=64), SCHED)
    assert len(r.rows) == 3 and np.isfinite([row.welfare.total for row in r.rows]).all()


def test_baseline_scale_config_constructs():
    cfg = PmirConfig(n_producers=1024, n_trainers=16, horizon=1, rounds_per_generation=2, max_cells=256)
    r = pmir_run(cfg, SCHED)
    assert len(r.rows) == 2 and r.provenance.shape == (1024,)


SEEDS = (17, 31, 42, 53)


@pytest.mark.parametrize("seed", SEEDS)
def test_residual_tail_small_and_trending_down(seed):
    sm = smoothed(residual_trace(run(seed), "round"), 50)
    half = sm[len(sm) // 2:]
    assert half.max() <= 0.05
    assert half[-1] <= half[0]


@pytest.mark.xfail(strict=True, reason="tie-switch excursions: when rho drifts across a near-tie between two "
                   "grid cells the sharp policy flips and the clearing gap spikes for a few rounds")
def test_smoothed_residual_strictly_nonincreasing_over_final_half():
    for seed in SEEDS:
        sm = smoothed(residual_trace(run(seed), "round"), 50)
        half = sm[len(sm) // 2:]
        assert np.all(np.diff(half) <= 1e-12), f"seed {seed}"
