"""Property suites run by ``lobdark validate``.

Every suite takes a scenario and returns a :class:`SuiteResult` with a
pass/fail verdict and the metrics behind it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import stats

from .models import PRICE_CHANNELS, Family, MarketState, ModelSpec
from .pathsim import SimConfig, ZERO_POLICY, classify_martingale, estimate_moments, simulate_paths
from .policy import (
    PolicyFn,
    check_bertsimas_lo,
    check_kratz_schoeneborn,
    compare_surfaces,
    evaluate_policy,
    interior_nodes,
    roundtrip_analysis,
)
from .scenario import Scenario
from .solver import make_axes, solve_backward

__all__ = [
    "SuiteResult",
    "SUITES",
    "run_suite",
    "bid_moments_no_trading",
    "poisson_chi2",
    "solve_pair_on_common_steps",
]


@dataclass
class SuiteResult:
    suite: str
    scenario: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "suite": self.suite,
            "scenario": self.scenario,
            "passed": bool(self.passed),
            "message": self.message,
            "metrics": self.metrics,
        }


def bid_moments_no_trading(model: ModelSpec, s0: float, h: float) -> tuple[float, float]:
    """Exact ``E[S_b(h)]`` and ``E[(S_b(h) - s0)^2]`` with no trading.

    Ignores the clamp at zero, which is immaterial when ``s0`` is many mark
    sizes above zero.
    """
    up, down = model.bid_up, model.bid_down
    c = up.mean_rate() - down.mean_rate()
    if model.family is Family.MEAN_REVERTING:
        var_rate = up.intensity * up.marks.moment(2) + down.intensity * down.marks.moment(2)
        k = model.kappa_b
        if k > 0:
            mean_shift = (model.s_bar + c / k - s0) * (-math.expm1(-k * h))
            var = var_rate * (-math.expm1(-2 * k * h)) / (2 * k)
        else:
            mean_shift = c * h
            var = var_rate * h
        return s0 + mean_shift, var + mean_shift**2
    if model.family is Family.GEOMETRIC:
        g1 = c
        g2 = up.intensity * (2 * up.marks.mean() + up.marks.moment(2)) + down.intensity * (
            down.marks.moment(2) - 2 * down.marks.mean()
        )
        m1 = s0 * math.exp(g1 * h)
        m2 = s0 * s0 * math.exp(g2 * h)
        return m1, m2 - 2 * s0 * m1 + s0 * s0
    raise ValueError("closed-form moments are available for the built-in families only")


def poisson_chi2(counts: np.ndarray, mean: float, min_expected: float = 5.0) -> tuple[float, float, int]:
    """Chi-square goodness of fit of ``counts`` to Poisson(``mean``).

    Cells are consecutive count values, merged from both tails until every
    cell expects at least ``min_expected`` observations. Returns
    ``(statistic, p-value, number of cells)``.
    """
    counts = np.asarray(counts, dtype=int)
    n = len(counts)
    k_max = int(max(counts.max(), stats.poisson.ppf(1 - 1e-12, mean)))
    ks = np.arange(k_max + 1)
    probs = stats.poisson.pmf(ks, mean)
    probs[-1] += stats.poisson.sf(k_max, mean)
    observed = np.bincount(counts, minlength=k_max + 1)[: k_max + 1].astype(float)
    cell_p, cell_o, acc_p, acc_o = [], [], 0.0, 0.0
    for p, o in zip(probs, observed):
        acc_p += p
        acc_o += o
        if acc_p * n >= min_expected:
            cell_p.append(acc_p)
            cell_o.append(acc_o)
            acc_p = acc_o = 0.0
    if acc_p > 0 or acc_o > 0:
        if cell_p:
            cell_p[-1] += acc_p
            cell_o[-1] += acc_o
        else:
            cell_p.append(acc_p)
            cell_o.append(acc_o)
    cell_p = np.array(cell_p)
    cell_o = np.array(cell_o)
    if len(cell_p) < 2:
        return 0.0, 1.0, len(cell_p)
    expected = cell_p / cell_p.sum() * n
    stat, p = stats.chisquare(cell_o, expected)
    return float(stat), float(p), len(cell_p)


def _moment_paths(sc: Scenario, n_paths: int, seed: int, horizon: float, record_every: float, dt_max: float, threads: int):
    cfg = SimConfig(n_paths=n_paths, dt_max=min(dt_max, record_every), seed=seed, record_every=record_every, horizon=horizon)
    start = replace(sc.start, x=0.0)
    return simulate_paths(sc.model, ZERO_POLICY, cfg, start, threads=threads)


def suite_moments(sc: Scenario, n_paths: Optional[int] = None, seed: Optional[int] = None, threads: int = 1) -> SuiteResult:
    """Bid mean against its closed form, Poisson event counts, and p=2 scaling."""
    v = sc.validate
    n = n_paths or int(v.get("moment_paths", 10_000))
    seed = sc.sim.seed if seed is None else seed
    horizons = [float(h) for h in v.get("moment_horizons", [sc.model.horizon])]
    T = max(horizons)
    step = min(horizons)
    if any(abs(h / step - round(h / step)) > 1e-9 for h in horizons):
        step = sc.sim.record_every
    dt_max = float(v.get("moment_dt_max", 1.0))
    paths = _moment_paths(sc, n, seed, T, step, dt_max, threads)
    s0 = sc.start.s_b
    label = classify_martingale(sc.model, sc.start)
    means = []
    ok = True
    for h in horizons:
        est = estimate_moments(paths, h, s0)
        exact, _ = bid_moments_no_trading(sc.model, s0, h)
        z = (est.mean - exact) / est.mean_se if est.mean_se > 0 else 0.0
        passed = abs(z) <= 3.0
        ok &= passed
        means.append({"h": h, "mean": est.mean, "se": est.mean_se, "expected": exact, "z": z, "passed": passed})
    level = float(v.get("chi2_level", 0.01))
    chi = []
    for ch in PRICE_CHANNELS:
        spec = sc.model.jump(ch)
        if not spec.active:
            continue
        counts = np.array([p.jump_counts[ch.value] for p in paths])
        stat, p, cells = poisson_chi2(counts, spec.intensity * T)
        passed = p >= level
        ok &= passed
        chi.append({"channel": ch.value, "statistic": stat, "p_value": p, "cells": cells, "passed": passed})
    metrics = {"classification": label, "n_paths": n, "means": means, "chi2": chi}
    if "scaling_horizon" in v:
        sc_res = moment_scaling(sc, float(v["scaling_horizon"]), n, seed, threads)
        metrics["scaling"] = sc_res
        ok &= sc_res["passed"]
    return SuiteResult("moments", sc.name, bool(ok), metrics)


def moment_scaling(sc: Scenario, h: float, n_paths: int, seed: int, threads: int = 1) -> dict:
    """Ratio of ``E|S_b(h) - s|^2 / h`` to the same at ``h / 2``, against its exact value."""
    paths = _moment_paths(sc, n_paths, seed, h, h / 2, h / 2, threads)
    s0 = sc.start.s_b
    full = estimate_moments(paths, h, s0)
    half = estimate_moments(paths, h / 2, s0)
    ratio = (full.sq_dev / h) / (half.sq_dev / (h / 2))
    _, m_full = bid_moments_no_trading(sc.model, s0, h)
    _, m_half = bid_moments_no_trading(sc.model, s0, h / 2)
    exact = (m_full / h) / (m_half / (h / 2))
    rel = ratio / exact
    return {
        "h": h,
        "second_moment_h": full.sq_dev,
        "second_moment_half": half.sq_dev,
        "slope_ratio": ratio,
        "exact_ratio": exact,
        "relative": rel,
        "passed": bool(0.8 <= rel <= 1.2),
    }


def solve_pair_on_common_steps(model_a, obj_a, model_b, obj_b, grid, terminal_a=None, terminal_b=None):
    """Solve two problems on the same time grid (the finer of the two automatic ones)."""
    if grid.n_t == 0:
        n_a = len(make_axes(model_a, obj_a, grid)[0].t)
        n_b = len(make_axes(model_b, obj_b, grid)[0].t)
        grid = grid.with_(n_t=max(n_a, n_b))
    a = solve_backward(model_a, obj_a, grid, terminal_a)
    b = solve_backward(model_b, obj_b, grid, terminal_b)
    return a, b


def suite_comparison(sc: Scenario, **_) -> SuiteResult:
    """Ordered terminal data must give node-wise ordered values.

    ``comparison_alphas = [a, b]`` asserts ``u(alpha=b) >= u(alpha=a)``; the
    terminal rewards are ordered that way exactly when ``a >= b``.
    """
    grid = sc.require_grid()
    a, b = (float(v) for v in sc.validate.get("comparison_alphas", [2 * sc.objective.alpha, sc.objective.alpha]))
    obj_a = replace(sc.objective, alpha=a)
    obj_b = replace(sc.objective, alpha=b)
    (va, pa, _), (vb, pb, _) = solve_pair_on_common_steps(sc.model, obj_a, sc.model, obj_b, grid)
    scale = max(np.abs(va.u).max(), np.abs(vb.u).max(), 1.0)
    atol = 1e-10 * scale
    terminal_bad = int(np.count_nonzero(va.u[-1] > vb.u[-1] + atol))
    value_bad = int(np.count_nonzero(va.u > vb.u + atol))
    mask = interior_nodes(pa.axes)
    nu_gate = compare_surfaces(pa.nu, pb.nu, mask, 1e-9 * sc.model.control_cap, name="nu(alpha=a) >= nu(alpha=b)")
    metrics = {
        "alphas": [a, b],
        "terminal_violations": terminal_bad,
        "value_violations": value_bad,
        "n_nodes": int(va.u.size),
        "nu_ordering": nu_gate.as_dict(),
    }
    msg = "" if value_bad == 0 else f"value ordering violated at {value_bad} nodes"
    return SuiteResult("comparison", sc.name, value_bad == 0, metrics, msg)


def _margin(sc: Scenario) -> float:
    return float(sc.validate.get("margin", 0.25))


def suite_bertsimas_lo(sc: Scenario, **_) -> SuiteResult:
    value, policy, _ = solve_backward(sc.model, sc.objective, sc.require_grid())
    try:
        rep = check_bertsimas_lo(
            policy,
            sc.model,
            sc.objective,
            tolerance=float(sc.validate.get("flatness_tolerance", 0.05)),
            margin=_margin(sc),
            level_floor=float(sc.validate.get("level_floor", 1e-3)),
        )
    except ValueError as exc:
        return SuiteResult("bertsimas_lo", sc.name, False, {}, f"precondition failed: {exc}")
    return SuiteResult("bertsimas_lo", sc.name, rep.flat, rep.as_dict())


def suite_kratz_schoeneborn(sc: Scenario, **_) -> SuiteResult:
    value, policy, _ = solve_backward(sc.model, sc.objective, sc.require_grid())
    try:
        rep = check_kratz_schoeneborn(policy, sc.model, margin=_margin(sc))
    except ValueError as exc:
        return SuiteResult("kratz_schoeneborn", sc.name, False, {}, f"precondition failed: {exc}")
    return SuiteResult("kratz_schoeneborn", sc.name, rep.full_posting, rep.as_dict())


def suite_roundtrip(sc: Scenario, **_) -> SuiteResult:
    """Passes when some interior node posts less than the full feasible quantity."""
    value, policy, _ = solve_backward(sc.model, sc.objective, sc.require_grid())
    rep = roundtrip_analysis(policy, sc.model, margin=_margin(sc))
    return SuiteResult("roundtrip", sc.name, rep.fraction > 0, rep.as_dict())


def suite_dp_consistency(sc: Scenario, n_paths: Optional[int] = None, seed: Optional[int] = None, threads: int = 1) -> SuiteResult:
    """Monte Carlo value of the extracted policy against the solver value at the start."""
    value, policy, diag = solve_backward(sc.model, sc.objective, sc.require_grid())
    n = n_paths or int(sc.validate.get("dp_paths", 1000))
    seed = sc.sim.seed if seed is None else seed
    cfg = SimConfig(n_paths=n, dt_max=policy.axes.dt, seed=seed, record_every=max(policy.axes.dt, 1.0))
    st = sc.start
    res = evaluate_policy(sc.model, sc.objective, PolicyFn(policy, sc.model), st, cfg, threads=threads)
    u0 = value.at(0, st.x, st.s_b, st.delta) + st.w
    tol = max(float(sc.validate.get("dp_rel_tol", 0.02)) * abs(u0), 3 * res.se)
    gap = res.mean - u0
    metrics = {"solver_value": u0, "mc_mean": res.mean, "mc_se": res.se, "n_paths": n, "gap": gap, "tolerance": tol}
    return SuiteResult("dp_consistency", sc.name, abs(gap) <= tol, metrics)


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "moments": suite_moments,
    "comparison": suite_comparison,
    "bertsimas_lo": suite_bertsimas_lo,
    "kratz_schoeneborn": suite_kratz_schoeneborn,
    "roundtrip": suite_roundtrip,
    "dp_consistency": suite_dp_consistency,
}


def run_suite(name: str, sc: Scenario, n_paths: Optional[int] = None, seed: Optional[int] = None, threads: int = 1) -> SuiteResult:
    try:
        fn = SUITES[name]
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}") from None
    return fn(sc, n_paths=n_paths, seed=seed, threads=threads)
