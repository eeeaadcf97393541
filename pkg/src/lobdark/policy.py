"""Policy interpolation, Monte Carlo evaluation and structural reports.

The reports operate on solved argmax surfaces. "Interior" nodes exclude the
depleted face ``x = 0``, the terminal slice and a boundary layer on the bid
and spread axes whose width is a fraction (``margin``) of each axis; with
``margin = 0`` only the outermost nodes are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import ControlPair, Family, MarketState, ModelSpec, ObjectiveSpec
from .pathsim import SimConfig, classify_martingale, simulate_paths
from .solver.grid import Axes, PolicyGrid

__all__ = [
    "PolicyFn",
    "evaluate_policy",
    "PolicyValue",
    "interior_nodes",
    "GateReport",
    "compare_surfaces",
    "time_monotonicity",
    "policy_flatness",
    "FlatnessReport",
    "check_bertsimas_lo",
    "BertsimasLoReport",
    "check_kratz_schoeneborn",
    "KratzSchoenebornReport",
    "roundtrip_analysis",
    "RoundtripReport",
]


def _axis_index(axis: np.ndarray, v: float) -> tuple[int, int, float]:
    n = len(axis)
    if n == 1:
        return 0, 0, 0.0
    lo, hi = axis[0], axis[-1]
    pos = (min(max(v, lo), hi) - lo) / (hi - lo) * (n - 1)
    i = min(int(pos), n - 2)
    return i, i + 1, pos - i


class PolicyFn:
    """Callable ``(t, state) -> ControlPair`` backed by a solved policy grid.

    The slice in force at ``t`` is ``floor(t / dt)``; within a slice controls
    are interpolated in ``(x, s_b, delta)`` (``"multilinear"``) or taken from
    the nearest node (``"nearest"``). Queries outside the grid are clamped to
    it, and the result is projected onto ``[0, N] x [0, min(N, x)]``.
    """

    def __init__(self, policy: PolicyGrid, model: ModelSpec, mode: str = "multilinear"):
        if mode not in ("nearest", "multilinear"):
            raise ValueError(f"unknown interpolation mode {mode!r}")
        self.policy = policy
        self.model = model
        self.mode = mode
        self.axes = policy.axes

    def slice_index(self, t: float) -> int:
        return self.axes.time_index(t)

    def raw(self, t: float, x: float, s: float, d: float) -> tuple[float, float]:
        n = self.slice_index(t)
        ax = self.axes
        nu, eta = self.policy.nu[n], self.policy.eta[n]
        ix = _axis_index(ax.x, x)
        js = _axis_index(ax.s, s)
        kd = _axis_index(ax.d, d)
        if self.mode == "nearest":
            i = ix[1] if ix[2] >= 0.5 else ix[0]
            j = js[1] if js[2] >= 0.5 else js[0]
            k = kd[1] if kd[2] >= 0.5 else kd[0]
            return float(nu[i, j, k]), float(eta[i, j, k])
        out_nu = out_eta = 0.0
        for i, wi in ((ix[0], 1.0 - ix[2]), (ix[1], ix[2])):
            if wi == 0.0:
                continue
            for j, wj in ((js[0], 1.0 - js[2]), (js[1], js[2])):
                if wj == 0.0:
                    continue
                for k, wk in ((kd[0], 1.0 - kd[2]), (kd[1], kd[2])):
                    if wk == 0.0:
                        continue
                    wt = wi * wj * wk
                    out_nu += wt * nu[i, j, k]
                    out_eta += wt * eta[i, j, k]
        return out_nu, out_eta

    def __call__(self, t: float, state: MarketState) -> ControlPair:
        nu, eta = self.raw(t, state.x, state.s_b, state.delta)
        return self.model.feasible(ControlPair(nu, eta), state.x)


@dataclass(frozen=True)
class PolicyValue:
    mean: float
    se: float
    n_paths: int
    values: np.ndarray = field(repr=False)


def evaluate_policy(
    model: ModelSpec,
    obj: ObjectiveSpec,
    policy,
    start: MarketState,
    config: SimConfig,
    threads: int = 1,
) -> PolicyValue:
    """Monte Carlo estimate of ``E[W(T) + (S_b(T) - alpha X(T)) X(T) - gamma int X^2]``.

    The running penalty is integrated exactly along each (piecewise linear)
    inventory path.
    """
    if obj.r > 0:
        raise ValueError("Monte Carlo evaluation is implemented for r = 0")
    paths = simulate_paths(model, policy, config, start, threads=threads)
    vals = np.array(
        [p.w[-1] + (p.s_b[-1] - obj.alpha * p.x[-1]) * p.x[-1] - obj.gamma * p.inventory_integral for p in paths]
    )
    n = len(vals)
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return PolicyValue(float(vals.mean()), se, n, vals)


def _layer(n: int, margin: float) -> slice:
    if n < 3:
        return slice(0, n)
    k = max(1, int(round(margin * (n - 1))))
    if 2 * k >= n:
        raise ValueError(f"margin {margin} leaves no interior nodes on an axis of {n}")
    return slice(k, n - k)


def interior_nodes(axes: Axes, margin: float = 0.0) -> np.ndarray:
    """Boolean mask over ``(t, x, s, d)`` selecting report nodes."""
    nt, nx, ns, nd = axes.shape
    mask = np.zeros((nt, nx, ns, nd), dtype=bool)
    mask[: nt - 1, 1:, _layer(ns, margin), _layer(nd, margin)] = True
    return mask


@dataclass
class GateReport:
    """Outcome of a node-wise ordering check ``upper >= lower``."""

    name: str
    n_nodes: int
    n_violations: int
    n_strict: int
    allowed_fraction: float
    violations: np.ndarray = field(repr=False)  # (t, x, s, d) index rows

    @property
    def violation_fraction(self) -> float:
        return self.n_violations / self.n_nodes if self.n_nodes else 0.0

    @property
    def strict_fraction(self) -> float:
        return self.n_strict / self.n_nodes if self.n_nodes else 0.0

    @property
    def passed(self) -> bool:
        return self.violation_fraction <= self.allowed_fraction

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "n_nodes": self.n_nodes,
            "violation_fraction": self.violation_fraction,
            "strict_fraction": self.strict_fraction,
            "allowed_fraction": self.allowed_fraction,
        }


def compare_surfaces(
    upper: np.ndarray,
    lower: np.ndarray,
    mask: np.ndarray,
    atol: float,
    allowed_fraction: float = 0.01,
    name: str = "ordering",
) -> GateReport:
    """Count masked nodes where ``upper < lower - atol``.

    ``atol`` absorbs round-off ties (for example two runs both at the cap).
    """
    upper, lower = np.asarray(upper), np.asarray(lower)
    if upper.shape != lower.shape or upper.shape != mask.shape:
        raise ValueError(f"shape mismatch: {upper.shape}, {lower.shape}, {mask.shape}")
    diff = upper - lower
    bad = mask & (diff < -atol)
    strict = mask & (diff > atol)
    return GateReport(name, int(mask.sum()), int(bad.sum()), int(strict.sum()), allowed_fraction, np.argwhere(bad))


def time_monotonicity(
    policy: PolicyGrid,
    which: str = "nu",
    margin: float = 0.0,
    allowed_fraction: float = 0.01,
    atol: Optional[float] = None,
) -> GateReport:
    """Check that a control is non-decreasing in ``t`` at fixed ``(x, s, d)``."""
    arr = getattr(policy, which)
    atol = 1e-9 * policy.control_cap if atol is None else atol
    mask = interior_nodes(policy.axes, margin)[:-1]  # slice n against slice n + 1
    return compare_surfaces(arr[1:], arr[:-1], mask, atol, allowed_fraction, f"{which} non-decreasing in t")


@dataclass
class FlatnessReport:
    max_variation: float
    n_slices: int
    worst_slice: tuple  # (t index, x index)
    level_floor: float

    def as_dict(self) -> dict:
        return {
            "max_variation": self.max_variation,
            "n_slices": self.n_slices,
            "worst_slice": list(self.worst_slice),
            "level_floor": self.level_floor,
        }


def policy_flatness(policy: PolicyGrid, margin: float = 0.25, level_floor: float = 1e-3) -> FlatnessReport:
    """Largest relative spread of ``nu*`` across ``(s_b, delta)`` at fixed ``(t, x)``.

    For every ``(t, x)`` the spread ``max - min`` over the interior book states
    is divided by the maximum there. Slices whose maximum is below
    ``level_floor * N`` carry no material trading and are skipped.
    """
    mask = interior_nodes(policy.axes, margin)
    any_sd = mask.any(axis=(2, 3))
    nt, nx, ns, nd = policy.axes.shape
    s_sl = _layer(ns, margin)
    d_sl = _layer(nd, margin)
    sub = policy.nu[:, :, s_sl, d_sl]
    hi = sub.max(axis=(2, 3))
    lo = sub.min(axis=(2, 3))
    use = any_sd & (hi >= level_floor * policy.control_cap)
    if not use.any():
        return FlatnessReport(0.0, 0, (-1, -1), level_floor)
    rel = np.where(use, (hi - lo) / np.where(hi > 0, hi, 1.0), -np.inf)
    n, i = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return FlatnessReport(float(rel[n, i]), int(use.sum()), (int(n), int(i)), level_floor)


@dataclass
class BertsimasLoReport:
    flatness: FlatnessReport
    tolerance: float
    profile_deviation: float  # max |nu* - x/(T - t + 1)| / N over interior nodes

    @property
    def flat(self) -> bool:
        return self.flatness.max_variation <= self.tolerance

    def as_dict(self) -> dict:
        return {
            "flat": self.flat,
            "tolerance": self.tolerance,
            "profile_deviation": self.profile_deviation,
            **self.flatness.as_dict(),
        }


def _require_martingale(model: ModelSpec, axes: Axes) -> None:
    for s in (axes.s[0], axes.s[-1]):
        for d in (axes.d[0], axes.d[-1]):
            label = classify_martingale(model, MarketState(0.0, 0.0, float(s), float(d)))
            if label != "martingale":
                raise ValueError(f"bid is not a martingale at s_b={s}, delta={d} ({label})")


def check_bertsimas_lo(
    policy: PolicyGrid,
    model: ModelSpec,
    obj: ObjectiveSpec,
    tolerance: float = 0.05,
    margin: float = 0.25,
    level_floor: float = 1e-3,
) -> BertsimasLoReport:
    """Flatness of ``nu*`` in the book state for a risk-neutral seller of a martingale.

    Also reports the distance to the constant-rate profile ``x / (T - t + 1)``
    (not gated: the profile assumes the terminal penalty equals the
    temporary-impact slope and that the rate cap never binds).
    """
    if obj.gamma != 0:
        raise ValueError("requires gamma = 0")
    if model.mu_b != 0 or model.mu_delta != 0:
        raise ValueError("requires zero permanent impact")
    _require_martingale(model, policy.axes)
    flat = policy_flatness(policy, margin, level_floor)
    ax = policy.axes
    prof = ax.x[None, :, None, None] / (model.horizon - ax.t[:, None, None, None] + 1.0)
    prof = np.minimum(prof, policy.control_cap)
    mask = interior_nodes(ax, margin)
    dev = float(np.max(np.abs(policy.nu - prof)[mask]) / policy.control_cap) if mask.any() else 0.0
    return BertsimasLoReport(flat, tolerance, dev)


@dataclass
class RoundtripReport:
    """Nodes where less than the full feasible quantity is posted in the dark pool."""

    n_nodes: int
    n_under: int
    nodes: np.ndarray = field(repr=False)  # rows (t, x, s_b, delta, eta*, cap)

    @property
    def fraction(self) -> float:
        return self.n_under / self.n_nodes if self.n_nodes else 0.0

    def exemplars(self, k: int = 5) -> list[dict]:
        keys = ("t", "x", "s_b", "delta", "eta", "cap")
        if len(self.nodes) == 0:
            return []
        pick = np.linspace(0, len(self.nodes) - 1, min(k, len(self.nodes))).round().astype(int)
        return [dict(zip(keys, map(float, self.nodes[i]))) for i in pick]

    def as_dict(self) -> dict:
        return {"fraction": self.fraction, "n_nodes": self.n_nodes, "n_under": self.n_under, "exemplars": self.exemplars()}


def roundtrip_analysis(policy: PolicyGrid, model: ModelSpec, margin: float = 0.25, rtol: float = 1e-9) -> RoundtripReport:
    """Enumerate interior nodes with ``eta* < min(N, x)``."""
    ax = policy.axes
    cap = np.minimum(model.posting_cap, ax.x)[None, :, None, None] + np.zeros(ax.shape)
    mask = interior_nodes(ax, margin)
    under = mask & (policy.eta < cap - rtol * model.posting_cap)
    idx = np.argwhere(under)
    nodes = np.column_stack(
        [ax.t[idx[:, 0]], ax.x[idx[:, 1]], ax.s[idx[:, 2]], ax.d[idx[:, 3]], policy.eta[under], cap[under]]
    ) if len(idx) else np.empty((0, 6))
    return RoundtripReport(int(mask.sum()), int(under.sum()), nodes)


@dataclass
class KratzSchoenebornReport:
    roundtrip: RoundtripReport
    nu_nondecreasing_in_x: float  # fraction of (t, s, d) columns
    nu_max_over_cap: float

    @property
    def full_posting(self) -> bool:
        return self.roundtrip.n_under == 0

    def as_dict(self) -> dict:
        return {
            "full_posting": self.full_posting,
            "under_fraction": self.roundtrip.fraction,
            "nu_nondecreasing_in_x": self.nu_nondecreasing_in_x,
            "nu_max_over_cap": self.nu_max_over_cap,
        }


def check_kratz_schoeneborn(policy: PolicyGrid, model: ModelSpec, margin: float = 0.25) -> KratzSchoenebornReport:
    """Full dark posting and the shape of the lit rate in the all-or-nothing limit.

    Preconditions: the spread axis is pinned at zero, every dark fill executes
    the whole posting, and the bid is a martingale.
    """
    ax = policy.axes
    if len(ax.d) != 1 or ax.d[0] != 0.0:
        raise ValueError("requires a spread axis pinned at 0")
    marks = model.dark_fill.marks
    if not (model.dark_fill.active and marks.kind == "point" and marks.low == 1.0):
        raise ValueError("requires dark fills with point-mass marks at 1")
    if model.family is Family.MEAN_REVERTING and model.kappa_b != 0:
        raise ValueError("requires kappa_b = 0")
    if model.bid_up.mean_rate() != model.bid_down.mean_rate():
        raise ValueError("requires a martingale bid")
    rt = roundtrip_analysis(policy, model, margin)
    mask = interior_nodes(ax, margin)
    cols = mask.any(axis=1)
    steps = np.diff(policy.nu, axis=1) >= -1e-9 * policy.control_cap
    mono = np.all(steps, axis=1)
    inc = float(mono[cols].mean()) if cols.any() else 1.0
    nu_max = float(policy.nu[mask].max() / policy.control_cap) if mask.any() else 0.0
    return KratzSchoenebornReport(rt, inc, nu_max)
