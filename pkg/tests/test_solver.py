import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import markov_chain_step, terminal_slice

from lobdark.models import Channel, Family, JumpSpec, MarkDistribution, MarketState, ModelSpec, ObjectiveSpec
from lobdark.pathsim import SimConfig, ZERO_POLICY
from lobdark.policy import evaluate_policy
from lobdark.solver import (
    Discretization,
    GridSpec,
    StabilityError,
    apply_jump_operator,
    discrete_residual,
    interior_mask,
    make_axes,
    optimize_hamiltonian,
    reduce_cash_dimension,
    solve_backward,
)

U01 = MarkDistribution.uniform(0.0, 0.1)


def test_reduction_certificate():
    assert reduce_cash_dimension(ObjectiveSpec(gamma=0.0, alpha=2.0, r=0.0)).valid
    assert not reduce_cash_dimension(ObjectiveSpec(alpha=2.0, r=0.05)).valid


def _single_node_setup(model, x=(0.0, 1000.0, 2000.0), s=(39.0, 40.0, 41.0), d=(0.0, 0.1, 0.2)):
    grid = GridSpec(n_x=len(x), n_s=len(s), n_d=len(d), s_min=s[0], s_max=s[-1], d_min=d[0], d_max=d[-1], n_t=2)
    axes, _ = make_axes(model.with_(inventory_cap=x[-1]), ObjectiveSpec(), grid)
    return grid, axes


def test_jump_operator_on_constant_is_zero():
    m = ModelSpec(bid_up=JumpSpec(0.5, U01), bid_down=JumpSpec(0.3, U01), spread_up=JumpSpec(0.2, U01),
                  dark_fill=JumpSpec(0.1, MarkDistribution.uniform(0, 1)), control_cap=1000.0, inventory_cap=2000.0)
    _, axes = _single_node_setup(m)
    u = np.full(axes.shape[1:], 3.5)
    for ch in (Channel.BID_UP, Channel.BID_DOWN, Channel.SPREAD_UP):
        assert apply_jump_operator(u, axes, m, (1, 1, 1), ch) == pytest.approx(0.0, abs=1e-12)


def test_jump_operator_linear_in_bid():
    m = ModelSpec(bid_up=JumpSpec(0.5, U01), inventory_cap=2000.0)
    _, axes = _single_node_setup(m)
    u = np.broadcast_to(axes.s[None, :, None], axes.shape[1:]).copy()
    assert apply_jump_operator(u, axes, m, (1, 1, 1), Channel.BID_UP) == pytest.approx(0.025, rel=1e-12)


def test_dark_operator_collects_cash_at_mid():
    m = ModelSpec(dark_fill=JumpSpec(0.1, MarkDistribution.uniform(0.0, 1.0)), control_cap=1000.0, inventory_cap=2000.0)
    _, axes = _single_node_setup(m, s=(39.0, 40.0, 41.0), d=(0.0, 0.1, 0.2))
    u = np.zeros(axes.shape[1:])
    inc = apply_jump_operator(u, axes, m, (1, 1, 1), Channel.DARK_FILL, eta=1000.0)
    assert inc == pytest.approx(2002.5, rel=1e-12)


def _node_model(**kw):
    base = dict(beta=1e-5, control_cap=1000.0, inventory_cap=2000.0, dark_fill=JumpSpec(0.1, MarkDistribution.uniform(0, 1)))
    base.update(kw)
    return ModelSpec(**base)


def test_hamiltonian_flat_value_sells_at_cap():
    m = _node_model()
    grid, axes = _single_node_setup(m)
    disc = Discretization(m, ObjectiveSpec(), grid, axes)
    ctrl, _ = optimize_hamiltonian(disc, np.zeros(axes.shape[1:]), (1, 1, 1))
    assert ctrl.nu == 1000.0
    assert ctrl.eta == 1000.0  # min(N, x) with x = 1000


def test_hamiltonian_marginal_value_equal_to_price_stops_lit_selling():
    m = _node_model(dark_fill=JumpSpec())
    grid, axes = _single_node_setup(m)
    disc = Discretization(m, ObjectiveSpec(), grid, axes)
    u = axes.x[:, None, None] * axes.s[None, :, None] + np.zeros(axes.shape[1:])
    ctrl, _ = optimize_hamiltonian(disc, u, (1, 1, 1))
    assert ctrl.nu == 0.0


def test_terminal_slice_is_exact_and_depleted_face_is_zero(smoke):
    m = smoke.model.with_(bid_up=JumpSpec(), bid_down=JumpSpec(), spread_up=JumpSpec(), spread_down=JumpSpec(),
                          kappa_b=0.0, kappa_delta=0.0, mu_b=0.0, mu_delta=0.0, beta=0.0)
    obj = ObjectiveSpec(gamma=0.0, alpha=0.5)
    value, policy, _ = solve_backward(m, obj, smoke.grid)
    ax = value.axes
    np.testing.assert_array_equal(value.u[-1], terminal_slice(obj, ax.x, ax.s, ax.d))
    assert np.all(value.u[:, 0] == 0.0)
    assert np.all(policy.nu[:, 0] == 0.0) and np.all(policy.eta[:, 0] == 0.0)


def test_policy_box(smoke):
    _, policy, _ = solve_backward(smoke.model, smoke.objective, smoke.grid)
    cap = smoke.model.control_cap
    ax = policy.axes
    assert np.all((policy.nu >= 0) & (policy.nu <= cap))
    assert np.all(policy.eta >= 0)
    assert np.all(policy.eta <= np.minimum(cap, ax.x)[None, :, None, None] + 1e-12)


def test_stability_bound_enforced(smoke):
    with pytest.raises(StabilityError):
        solve_backward(smoke.model, smoke.objective, smoke.grid.with_(n_t=3))


def test_auto_time_steps_respect_bound(smoke):
    _, _, diag = solve_backward(smoke.model, smoke.objective, smoke.grid.with_(n_t=0))
    assert 0 < diag.cfl_ratio <= 1.0


def test_diagnostics_present(smoke):
    _, _, diag = solve_backward(smoke.model, smoke.objective, smoke.grid)
    d = diag.as_dict()
    assert d["max_residual"] > 0 and set(d["clamp_counts"]) == {"bid_up", "bid_down", "spread_up", "spread_down"}
    assert diag.residual[-1] == 0.0


def test_residual_recomputation_matches_diagnostics(smoke):
    value, _, diag = solve_backward(smoke.model, smoke.objective, smoke.grid)
    worst, per_slice = discrete_residual(value, smoke.model, smoke.objective)
    assert worst == pytest.approx(diag.max_residual, rel=1e-12)
    assert per_slice[-1] == 0.0


def test_residual_grows_when_value_is_perturbed(smoke):
    value, _, _ = solve_backward(smoke.model, smoke.objective, smoke.grid)
    base, _ = discrete_residual(value, smoke.model, smoke.objective)
    value.u[2, 3, 3, 3] += 1.0
    bumped, _ = discrete_residual(value, smoke.model, smoke.objective)
    assert bumped > base


def test_residual_halves_under_refinement(smoke):
    """Halving dt and every h roughly halves the residual (factor 2 within 1.5x)."""
    residuals = []
    for k in (1, 2, 4):
        grid = smoke.grid.with_(n_x=4 * k + 1, n_s=4 * k + 1, n_d=4 * k + 1, n_t=8 * k + 1)
        residuals.append(solve_backward(smoke.model, smoke.objective, grid)[2].max_residual)
    for coarse, fine in zip(residuals, residuals[1:]):
        assert 2 / 1.5 <= coarse / fine <= 2 * 1.5


@st.composite
def tiny_problems(draw):
    family = draw(st.sampled_from([Family.MEAN_REVERTING, Family.GEOMETRIC]))
    lam = st.floats(0.0, 1.0)
    marks = MarkDistribution.uniform(0.0, draw(st.floats(0.01, 0.5)))
    model = ModelSpec(
        family=family,
        kappa_b=draw(st.floats(0, 1)),
        kappa_delta=draw(st.floats(0, 1)),
        s_bar=draw(st.floats(8, 12)),
        delta_bar=draw(st.floats(0, 1)),
        mu_b=draw(st.floats(0, 0.1)),
        mu_delta=draw(st.floats(0, 0.1)),
        beta=draw(st.floats(0, 0.5)),
        bid_up=JumpSpec(draw(lam), marks),
        bid_down=JumpSpec(draw(lam), marks),
        spread_up=JumpSpec(draw(lam), marks),
        spread_down=JumpSpec(draw(lam), marks),
        dark_fill=JumpSpec(draw(lam), MarkDistribution.uniform(0, 1)),
        inventory_cap=draw(st.floats(1, 10)),
        control_cap=draw(st.floats(0.5, 5)),
        dark_cap=draw(st.one_of(st.none(), st.floats(0.5, 5))),
    )
    obj = ObjectiveSpec(gamma=draw(st.floats(0, 0.5)), alpha=draw(st.floats(0.05, 2)), r=draw(st.sampled_from([0.0, 0.1])))
    grid = GridSpec(n_x=3, n_s=3, n_d=3, s_min=8.0, s_max=12.0, d_max=1.0, n_t=2, n_nu=2,
                    n_eta=draw(st.integers(2, 4)), nu_mode="grid")
    return model, obj, grid


@given(tiny_problems(), st.floats(0.1, 1.0))
def test_one_step_equals_markov_chain_enumeration(problem, frac):
    model, obj, grid = problem
    axes, dt_max = make_axes(model, obj, grid)
    model = model.with_(horizon=frac * min(dt_max, 10.0))
    value, policy, _ = solve_backward(model, obj, grid)
    ax = value.axes
    u, nu, eta, min_stay = markov_chain_step(model, obj, ax.x, ax.s, ax.d, value.u[-1], ax.dt, grid.n_eta)
    assert min_stay >= -1e-12  # the step is a genuine Markov chain
    np.testing.assert_allclose(value.u[0], u, rtol=0, atol=1e-12 * max(1.0, np.abs(u).max()))


def test_bellman_consistency_over_the_control_grid(smoke):
    """Along a multi-step solve, every control on the grid does no better than the argmax."""
    grid = smoke.grid.with_(n_x=4, n_s=4, n_d=4, nu_mode="grid", n_nu=2, n_eta=3)
    value, policy, _ = solve_backward(smoke.model, smoke.objective, grid)
    ax = value.axes
    for n in (0, 3, len(ax.t) - 2):
        u, nu, eta, _ = markov_chain_step(smoke.model, smoke.objective, ax.x, ax.s, ax.d, value.u[n + 1], ax.dt, 3)
        np.testing.assert_allclose(value.u[n], u, atol=1e-11)
        np.testing.assert_array_equal(policy.nu[n], nu)
        np.testing.assert_array_equal(policy.eta[n], eta)


def test_comparison_principle_with_ordered_terminal_data(smoke):
    grid = smoke.grid
    axes, _ = make_axes(smoke.model, smoke.objective, grid)
    rng = np.random.default_rng(0)
    low = terminal_slice(smoke.objective, axes.x, axes.s, axes.d)
    high = low + rng.uniform(0, 5, low.shape)
    v_low, _, _ = solve_backward(smoke.model, smoke.objective, grid, terminal=low)
    v_high, _, _ = solve_backward(smoke.model, smoke.objective, grid, terminal=high)
    assert np.all(v_high.u >= v_low.u - 1e-10)


def test_value_ordered_in_risk_aversion(smoke):
    lo = solve_backward(smoke.model, smoke.objective.__class__(gamma=0.01, alpha=0.5), smoke.grid)[0]
    hi = solve_backward(smoke.model, smoke.objective.__class__(gamma=0.5, alpha=0.5), smoke.grid)[0]
    assert np.all(lo.u >= hi.u - 1e-10)


def test_value_dominates_doing_nothing(smoke):
    value, _, _ = solve_backward(smoke.model, smoke.objective, smoke.grid)
    for x in (3.0, 7.0):
        start = MarketState(0.0, x, 10.0, 0.6)
        res = evaluate_policy(smoke.model, smoke.objective, ZERO_POLICY, start, SimConfig(n_paths=400, dt_max=0.05, seed=1))
        assert value.at(0, x, 10.0, 0.6) >= res.mean - res.se


def test_discounted_solve_runs_and_is_lower(smoke):
    v0 = solve_backward(smoke.model, smoke.objective, smoke.grid)[0]
    disc = ObjectiveSpec(gamma=smoke.objective.gamma, alpha=smoke.objective.alpha, r=0.05)
    v1 = solve_backward(smoke.model, disc, smoke.grid)[0]
    mask = interior_mask(v0.axes)
    assert np.all(v1.u[0][mask] <= v0.u[0][mask] + 1e-9)


def test_vertex_and_fine_grid_search_agree(smoke):
    exact = solve_backward(smoke.model, smoke.objective, smoke.grid)[0]
    search = solve_backward(smoke.model, smoke.objective, smoke.grid.with_(nu_mode="grid", n_nu=2001))[0]
    np.testing.assert_allclose(search.u, exact.u, atol=1e-5 * np.abs(exact.u).max())
    assert np.all(search.u <= exact.u + 1e-9)
