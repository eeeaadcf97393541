import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lobdark.models import Channel, ControlPair, Family, JumpSpec, MarkDistribution, MarketState, ModelSpec
from lobdark.pathsim import (
    CSV_COLUMNS,
    ConstantPolicy,
    SimConfig,
    ZERO_POLICY,
    channel_rng,
    classify_martingale,
    estimate_moments,
    simulate_paths,
    write_paths_csv,
)
from lobdark.scenario import load_scenario

U01 = MarkDistribution.uniform(0.0, 0.1)


def busy_model(family=Family.MEAN_REVERTING, **kw):
    base = dict(
        family=family,
        kappa_b=0.05,
        kappa_delta=0.05,
        s_bar=40.0,
        delta_bar=0.1,
        mu_b=0.01,
        mu_delta=0.01,
        beta=0.01,
        bid_up=JumpSpec(0.5, U01),
        bid_down=JumpSpec(0.6, U01),
        spread_up=JumpSpec(0.3, U01),
        spread_down=JumpSpec(0.4, U01),
        dark_fill=JumpSpec(0.2, MarkDistribution.uniform(0.0, 1.0)),
        horizon=20.0,
        inventory_cap=100.0,
        control_cap=10.0,
    )
    base.update(kw)
    return ModelSpec(**base)


class StateDependent:
    """Trades harder when the bid is high and posts more when little is left."""

    def __call__(self, t, state):
        return ControlPair(0.2 * state.s_b, 100.0 / (1.0 + state.x))


def test_fixed_point_without_jumps_is_constant():
    m = ModelSpec(kappa_b=0.3, kappa_delta=0.3, s_bar=40.0, delta_bar=0.1, horizon=5.0)
    [p] = simulate_paths(m, ZERO_POLICY, SimConfig(dt_max=0.5), MarketState(0, 0.0, 40.0, 0.1))
    assert np.all(p.s_b == 40.0) and np.all(p.delta == 0.1)
    [q] = simulate_paths(m, ZERO_POLICY, SimConfig(dt_max=0.5), MarketState(0, 0.0, 39.0, 0.1))
    assert q.s_b[-1] > 39.0


def test_fig1_path_keeps_ask_above_mid_above_bid():
    sc = load_scenario("fig1")
    [p] = simulate_paths(sc.model, ZERO_POLICY, sc.sim, sc.start)
    assert p.times[-1] == pytest.approx(100.0)
    assert len(p.times) == 1001
    assert np.all(p.ask >= p.mid) and np.all(p.mid >= p.s_b)


def test_constant_policy_liquidates_exactly():
    x0, T, beta, s = 50.0, 10.0, 0.02, 40.0
    m = ModelSpec(beta=beta, horizon=T, inventory_cap=x0, control_cap=10.0)
    nu = x0 / T
    [p] = simulate_paths(m, ConstantPolicy(nu), SimConfig(dt_max=0.07, record_every=1.0), MarketState(0, x0, s, 0.1))
    assert p.x[-1] == 0.0
    assert p.w[-1] == pytest.approx(x0 * s - beta * nu**2 * T, rel=1e-12)
    assert p.tau == pytest.approx(T, abs=1e-9)
    assert p.inventory_integral == pytest.approx(x0**2 * T / 3, rel=1e-12)


def test_trading_stops_when_inventory_runs_out():
    m = ModelSpec(horizon=10.0, inventory_cap=5.0, control_cap=10.0, s_bar=40.0)
    [p] = simulate_paths(m, ConstantPolicy(2.0), SimConfig(dt_max=0.3, record_every=0.5), MarketState(0, 5.0, 40.0, 0.1))
    assert p.tau == pytest.approx(2.5, abs=1e-12)
    after = p.times > p.tau
    assert np.all(p.x[after] == 0.0) and np.all(p.nu[after] == 0.0)
    assert p.w[-1] == pytest.approx(5.0 * 40.0, rel=1e-12)


@pytest.mark.parametrize("family", [Family.MEAN_REVERTING, Family.GEOMETRIC])
def test_path_invariants_under_state_dependent_policy(family):
    m = busy_model(family)
    cfg = SimConfig(n_paths=20, dt_max=0.05, seed=11, record_every=0.05)
    paths = simulate_paths(m, StateDependent(), cfg, MarketState(0, 100.0, 40.0, 0.1))
    for p in paths:
        assert np.all(np.diff(p.x) <= 1e-12) and np.all(p.x >= 0)
        assert np.all(p.delta >= 0) and np.all(p.s_b >= 0)
        assert np.all(p.eta <= np.minimum(10.0, p.x) + 1e-12)


def test_cash_consistency_with_deterministic_book():
    """No price jumps: every fill executes at the constant mid, so cash is fully determined."""
    m = ModelSpec(beta=0.01, horizon=20.0, inventory_cap=100.0, control_cap=10.0,
                  dark_fill=JumpSpec(0.5, MarkDistribution.uniform(0.0, 1.0)))
    cfg = SimConfig(n_paths=25, dt_max=0.05, seed=9, record_every=20.0, trace=True)
    for p in simulate_paths(m, ConstantPolicy(1.0, 20.0), cfg, MarketState(0, 100.0, 40.0, 0.2)):
        lit = float(sum(h * nu * (s - m.beta * nu) for _, h, _, s, _, nu in p.steps))
        executed = 100.0 - p.x[-1] - float(sum(h * nu for _, h, _, _, _, nu in p.steps))
        assert executed >= 0
        assert p.w[-1] == pytest.approx(lit + executed * 40.1, rel=1e-9)
        assert all(0.0 < eta <= 20.0 for _, eta, _ in p.fills)


def test_cash_consistency_with_price_jumps():
    """Rebuild w(T) from the traced steps and fill records while prices jump."""
    m = busy_model(kappa_b=0.0, kappa_delta=0.0, mu_b=0.0, mu_delta=0.0, dark_fill=JumpSpec(0.5, MarkDistribution.uniform(0.0, 1.0)))
    cfg = SimConfig(n_paths=25, dt_max=0.05, seed=21, record_every=20.0, trace=True)
    for p in simulate_paths(m, ConstantPolicy(2.0, 15.0), cfg, MarketState(0, 100.0, 40.0, 0.2)):
        steps = p.steps
        w = float(np.sum(steps[:, 1] * steps[:, 5] * (steps[:, 3] - m.beta * steps[:, 5])))
        ends = steps[:, 0] + steps[:, 1]
        for t_fill, eta, z in p.fills:
            k = int(np.argmin(np.abs(ends - t_fill)))
            _, h, x, s, d, nu = steps[k]
            x_before = x - nu * h
            w += min(eta, x_before) * z * (s + 0.5 * d)
        assert p.w[-1] == pytest.approx(w, rel=1e-9)


def test_dark_fill_uses_posting_in_force_before_fill():
    m = ModelSpec(horizon=10.0, inventory_cap=100.0, control_cap=50.0, s_bar=40.0,
                  dark_fill=JumpSpec(1.0, MarkDistribution.point(1.0)))
    cfg = SimConfig(dt_max=0.1, record_every=1.0, forced_fill_times=(2.5, 7.25))
    [p] = simulate_paths(m, ConstantPolicy(0.0, 30.0), cfg, MarketState(0, 100.0, 40.0, 0.2))
    assert [f[0] for f in p.fills] == [2.5, 7.25]
    assert p.x[-1] == pytest.approx(40.0)
    assert p.w[-1] == pytest.approx(60.0 * 40.1)


def test_forced_fill_times_validated():
    with pytest.raises(ValueError):
        SimConfig(forced_fill_times=(3.0, 2.0))


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(n_paths=0)
    with pytest.raises(ValueError):
        SimConfig(dt_max=0.0)
    with pytest.raises(ValueError):
        SimConfig(dt_max=1.0, record_every=0.5)


def test_determinism_across_runs_and_threads():
    m = busy_model()
    cfg = SimConfig(n_paths=12, dt_max=0.1, seed=2024, record_every=0.5)
    start = MarketState(0, 100.0, 40.0, 0.1)
    outs = []
    for threads in (1, 1, 4):
        buf = io.StringIO()
        write_paths_csv(simulate_paths(m, StateDependent(), cfg, start, threads=threads), buf)
        outs.append(buf.getvalue())
    assert outs[0] == outs[1] == outs[2]


def test_streams_are_independent_per_channel_and_path():
    a = channel_rng(7, 0, Channel.BID_UP).random(4)
    b = channel_rng(7, 0, Channel.BID_DOWN).random(4)
    c = channel_rng(7, 1, Channel.BID_UP).random(4)
    assert not np.allclose(a, b) and not np.allclose(a, c)
    assert np.array_equal(a, channel_rng(7, 0, Channel.BID_UP).random(4))


def test_switching_a_channel_off_leaves_other_channels_untouched():
    m = busy_model(kappa_b=0.0, kappa_delta=0.0, mu_b=0.0, mu_delta=0.0)
    cfg = SimConfig(n_paths=3, dt_max=1.0, seed=5, record_every=1.0)
    start = MarketState(0, 0.0, 40.0, 5.0)
    with_spread = simulate_paths(m, ZERO_POLICY, cfg, start)
    no_spread = simulate_paths(m.with_(spread_up=JumpSpec(), spread_down=JumpSpec()), ZERO_POLICY, cfg, start)
    for p, q in zip(with_spread, no_spread):
        assert p.jump_counts["bid_up"] == q.jump_counts["bid_up"]
        assert p.jump_counts["bid_down"] == q.jump_counts["bid_down"]


def test_csv_layout():
    m = busy_model()
    paths = simulate_paths(m, ZERO_POLICY, SimConfig(n_paths=2, dt_max=0.5, record_every=5.0), MarketState(0, 0.0, 40.0, 0.1))
    buf = io.StringIO()
    write_paths_csv(paths, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == ["path_id", *CSV_COLUMNS]
    assert len(lines) == 1 + 2 * 5


def test_moments_of_deterministic_model():
    m = ModelSpec(horizon=10.0)
    paths = simulate_paths(m, ZERO_POLICY, SimConfig(n_paths=3, dt_max=1.0), MarketState(0, 0.0, 40.0, 0.1))
    est = estimate_moments(paths, 10.0)
    assert est.sup_dev == 0.0 and est.sq_dev == 0.0 and est.mean == 40.0


def test_martingale_mean_within_three_standard_errors():
    sc = load_scenario("fig10")
    cfg = SimConfig(n_paths=1500, dt_max=10.0, seed=17, record_every=10.0, horizon=50.0)
    paths = simulate_paths(sc.model, ZERO_POLICY, cfg, MarketState(0, 0.0, 40.0, 0.2))
    est = estimate_moments(paths, 50.0, 40.0)
    assert abs(est.mean - 40.0) <= 3 * est.mean_se


def test_value_at_requires_sample_time():
    m = ModelSpec(horizon=2.0)
    [p] = simulate_paths(m, ZERO_POLICY, SimConfig(dt_max=1.0), MarketState(0, 0.0, 40.0, 0.1))
    with pytest.raises(ValueError):
        p.value_at(0.5)


def _mr(up, down, kappa=0.0):
    return ModelSpec(kappa_b=kappa, s_bar=40.0, bid_up=JumpSpec(up, U01), bid_down=JumpSpec(down, U01))


@pytest.mark.parametrize("up, down, label", [(0.5, 0.1, "sub"), (0.3, 0.3, "martingale"), (0.1, 0.5, "super")])
def test_classify_martingale_examples(up, down, label):
    assert classify_martingale(_mr(up, down)) == label


def test_classify_mean_reversion_is_state_dependent():
    m = _mr(0.3, 0.3, kappa=0.1)
    assert classify_martingale(m, MarketState(0, 0, 39.0, 0.1)) == "sub"
    assert classify_martingale(m, MarketState(0, 0, 41.0, 0.1)) == "super"
    assert classify_martingale(m) == "martingale"


@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_classify_geometric_matches_sign_of_compensator(up, down):
    m = ModelSpec(family=Family.GEOMETRIC, bid_up=JumpSpec(up, U01), bid_down=JumpSpec(down, U01))
    label = classify_martingale(m, MarketState(0, 0, 40.0, 0.1))
    expected = "sub" if up > down else "super" if up < down else "martingale"
    if abs(up - down) > 1e-9:
        assert label == expected
