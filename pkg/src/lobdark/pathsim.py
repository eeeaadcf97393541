"""Event-exact Monte Carlo simulation of (x, s_b, delta, w) under a policy.

Each of the five jump channels draws its own exponential inter-arrival times
and marks from a dedicated counter-based stream keyed by ``(seed, path,
channel)``. Between events the drift is integrated with explicit steps no
longer than ``dt_max``; the control is re-evaluated at the start of every
step and held until its end, so the posting executed by a dark fill is the
one in force just before the fill.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .models import (
    ALL_CHANNELS,
    Channel,
    ControlPair,
    Family,
    MarketState,
    ModelSpec,
    drift,
    price_jump,
)

log = logging.getLogger(__name__)

__all__ = [
    "SimConfig",
    "PathRecord",
    "SimulationError",
    "ConstantPolicy",
    "ZERO_POLICY",
    "simulate_paths",
    "channel_rng",
    "estimate_moments",
    "MomentEstimate",
    "classify_martingale",
    "write_paths_csv",
    "CSV_COLUMNS",
]

Policy = Callable[[float, MarketState], ControlPair]

CSV_COLUMNS = ("time", "x", "s_b", "delta", "mid", "ask", "w", "nu", "eta")


class SimulationError(RuntimeError):
    def __init__(self, path: int, t: float, what: str):
        super().__init__(f"path {path}: {what} at t={t:.6g}")
        self.path = path
        self.t = t


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``forced_fill_times`` replaces the random dark-pool arrival times by a
    fixed list (marks stay random). ``trace`` keeps every integration step
    so that cash and inventory can be recomputed independently.
    """

    n_paths: int = 1
    dt_max: float = 0.1
    seed: int = 0
    record_every: float = 1.0
    horizon: Optional[float] = None
    forced_fill_times: Optional[tuple] = None
    trace: bool = False

    def __post_init__(self):
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ValueError(f"n_paths must be a positive integer, got {self.n_paths!r}")
        if not (self.dt_max > 0 and math.isfinite(self.dt_max)):
            raise ValueError("dt_max must be positive and finite")
        if not self.record_every >= self.dt_max:
            raise ValueError("record_every must be >= dt_max")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.forced_fill_times is not None:
            times = tuple(float(t) for t in self.forced_fill_times)
            if any(b <= a for a, b in zip(times, times[1:])) or any(t < 0 for t in times):
                raise ValueError("forced_fill_times must be non-negative and strictly increasing")
            object.__setattr__(self, "forced_fill_times", times)


@dataclass
class PathRecord:
    """One simulated trajectory sampled every ``record_every`` seconds."""

    times: np.ndarray
    x: np.ndarray
    s_b: np.ndarray
    delta: np.ndarray
    w: np.ndarray
    nu: np.ndarray
    eta: np.ndarray
    fills: list  # (time, posted eta, executed fraction)
    clamp_events: int
    jump_counts: dict
    tau: float
    inventory_integral: float  # int_0^T x(u)^2 du
    steps: Optional[np.ndarray] = None  # rows (t, h, x, s_b, delta, nu) when traced

    @property
    def states(self) -> list[MarketState]:
        return [
            MarketState(float(t), float(x), float(s), float(d), float(w))
            for t, x, s, d, w in zip(self.times, self.x, self.s_b, self.delta, self.w)
        ]

    @property
    def mid(self) -> np.ndarray:
        return self.s_b + 0.5 * self.delta

    @property
    def ask(self) -> np.ndarray:
        return self.s_b + self.delta

    def final(self) -> MarketState:
        return MarketState(float(self.times[-1]), float(self.x[-1]), float(self.s_b[-1]), float(self.delta[-1]), float(self.w[-1]))

    def value_at(self, h: float, which: str = "s_b") -> float:
        """Recorded value at sample time ``h`` (must be a sample time)."""
        i = int(np.searchsorted(self.times, h - 1e-9))
        if i >= len(self.times) or abs(self.times[i] - h) > 1e-9:
            raise ValueError(f"t={h} is not a recorded sample time")
        return float(getattr(self, which)[i])


@dataclass(frozen=True)
class ConstantPolicy:
    nu: float = 0.0
    eta: float = 0.0

    def __call__(self, t: float, state: MarketState) -> ControlPair:
        return ControlPair(self.nu, self.eta)


ZERO_POLICY = ConstantPolicy()


def channel_rng(seed: int, path: int, channel: Channel) -> np.random.Generator:
    """Independent Philox stream for one (path, channel) pair."""
    k = ALL_CHANNELS.index(Channel(channel))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(path, k))))


class _Arrivals:
    """Lazily generated event times and marks for one channel."""

    def __init__(self, model: ModelSpec, channel: Channel, rng: np.random.Generator, forced: Optional[tuple]):
        spec = model.jump(channel)
        self.channel = channel
        self.marks = spec.marks
        self.rate = spec.intensity
        self.rng = rng
        self.forced = list(forced) if forced is not None else None
        self.next_time = math.inf
        self._advance(0.0)

    def _advance(self, now: float) -> None:
        if self.forced is not None:
            self.next_time = self.forced.pop(0) if self.forced else math.inf
        elif self.rate > 0:
            self.next_time = now + float(self.rng.exponential(1.0 / self.rate))
        else:
            self.next_time = math.inf

    def fire(self) -> float:
        mark = float(self.marks.sample(self.rng, 1)[0])
        self._advance(self.next_time)
        return mark


def _drift_fn(model: ModelSpec):
    """Scalar ``(ds, dd)`` for the built-in families, avoiding object churn."""
    if model.family is Family.MEAN_REVERTING:
        kb, kd, sb, db, mb, md = model.kappa_b, model.kappa_delta, model.s_bar, model.delta_bar, model.mu_b, model.mu_delta
        return lambda s, d, nu: (kb * (sb - s - mb * nu), kd * (db - d + md * nu))
    if model.family is Family.GEOMETRIC:
        mb, md = model.mu_b, model.mu_delta
        return lambda s, d, nu: (-mb * nu * s, md * nu * d)

    def custom(s, d, nu):
        ds, dd, _, _ = drift(model, MarketState(0.0, 0.0, s, d), ControlPair(nu, 0.0))
        return ds, dd

    return custom


def _simulate_one(model: ModelSpec, policy: Policy, cfg: SimConfig, start: MarketState, path: int) -> PathRecord:
    T = cfg.horizon if cfg.horizon is not None else model.horizon
    beta = model.beta
    ds_dt = _drift_fn(model)
    arrivals = []
    for ch in ALL_CHANNELS:
        forced = cfg.forced_fill_times if ch is Channel.DARK_FILL else None
        arrivals.append(_Arrivals(model, ch, channel_rng(cfg.seed, path, ch), forced))

    n_rec = int(math.floor(T / cfg.record_every + 1e-9))
    rec_times = [k * cfg.record_every for k in range(n_rec + 1)]
    if T - rec_times[-1] > 1e-9:
        rec_times.append(T)
    rows = []
    fills = []
    counts = {ch.value: 0 for ch in ALL_CHANNELS}
    steps = [] if cfg.trace else None
    clamps = 0
    t, x, s, d, w = start.t, start.x, start.s_b, start.delta, start.w
    tau = math.inf if x > 0 else t
    x_int = 0.0
    rec_i = 0

    def control(t, x, s, d):
        if x <= 0.0:
            return 0.0, 0.0
        c = model.feasible(policy(t, MarketState(t, x, s, d, w)), x)
        return c.nu, c.eta

    nu, eta = control(t, x, s, d)
    while True:
        while rec_i < len(rec_times) and rec_times[rec_i] <= t + 1e-12:
            rows.append((rec_times[rec_i], x, s, d, w, nu, eta))
            rec_i += 1
        if t >= T - 1e-12:
            break
        t_event = min(a.next_time for a in arrivals)
        t_rec = rec_times[rec_i] if rec_i < len(rec_times) else T
        t_end = min(t + cfg.dt_max, t_event, t_rec, T)
        h = t_end - t
        stop = False
        if nu > 0 and nu * h >= x * (1.0 - 1e-9):  # inventory runs out inside the step
            h = x / nu
            t_end = min(t + h, T)
            stop = True
        if h > 0:
            a, b = ds_dt(s, d, nu)
            if steps is not None:
                steps.append((t, h, x, s, d, nu))
            x_int += x * x * h - x * nu * h * h + nu * nu * h ** 3 / 3.0
            w += h * nu * (s - beta * nu)
            x = 0.0 if stop else x - nu * h
            s += h * a
            d += h * b
            if s < 0.0 or d < 0.0:
                clamps += 1
                s, d = max(s, 0.0), max(d, 0.0)
        t = t_end
        if stop:
            tau = t
        for arr in arrivals:
            if arr.next_time <= t + 1e-12 and arr.next_time < T:
                t_fire = arr.next_time
                mark = arr.fire()
                counts[arr.channel.value] += 1
                if arr.channel is Channel.DARK_FILL:
                    if x > 0 and eta > 0:
                        executed = min(eta, x) * mark
                        w += executed * (s + 0.5 * d)
                        x = max(x - executed, 0.0)
                        fills.append((t_fire, eta, mark))
                        if x <= 0.0:
                            tau = t_fire
                else:
                    s2, d2 = price_jump(model, arr.channel, s, d, mark)
                    if s2 < 0.0 or d2 < 0.0:
                        clamps += 1
                    s, d = max(float(s2), 0.0), max(float(d2), 0.0)
        if not (math.isfinite(s) and math.isfinite(d) and math.isfinite(w) and math.isfinite(x)):
            raise SimulationError(path, t, "non-finite state")
        nu, eta = control(t, x, s, d)

    arr = np.array(rows, dtype=float)
    return PathRecord(
        times=arr[:, 0],
        x=arr[:, 1],
        s_b=arr[:, 2],
        delta=arr[:, 3],
        w=arr[:, 4],
        nu=arr[:, 5],
        eta=arr[:, 6],
        fills=fills,
        clamp_events=clamps,
        jump_counts=counts,
        tau=tau if math.isfinite(tau) else T,
        inventory_integral=x_int,
        steps=np.array(steps, dtype=float).reshape(-1, 6) if steps is not None else None,
    )


def simulate_paths(
    model: ModelSpec,
    policy: Policy,
    config: SimConfig,
    start: MarketState,
    threads: int = 1,
) -> list[PathRecord]:
    """Simulate ``config.n_paths`` independent paths from ``start``.

    Output does not depend on ``threads``: each path's randomness is a pure
    function of ``(seed, path index)`` and results are returned in path order.
    """
    start = start.check(model)
    n = config.n_paths
    if threads <= 1 or n == 1:
        return [_simulate_one(model, policy, config, start, i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda i: _simulate_one(model, policy, config, start, i), range(n)))


@dataclass(frozen=True)
class MomentEstimate:
    horizon: float
    n_paths: int
    mean: float
    mean_se: float
    abs_dev1: float
    abs_dev1_se: float
    sq_dev: float
    sq_dev_se: float
    sup_dev: float
    sup_dev_se: float
    sup_sq_dev: float
    sup_sq_dev_se: float


def estimate_moments(paths: Sequence[PathRecord], h: float, s0: Optional[float] = None) -> MomentEstimate:
    """Monte Carlo moments of the bid at ``h`` and of its running deviation.

    Deviations are taken from the starting bid ``s0`` (first recorded value by
    default). The supremum is over recorded samples in ``[0, h]``.
    """
    if not paths:
        raise ValueError("no paths")
    n = len(paths)
    end = np.empty(n)
    sup = np.empty(n)
    for i, p in enumerate(paths):
        if p.times[-1] < h - 1e-9:
            raise ValueError(f"path {i} ends at {p.times[-1]} < h={h}")
        ref = p.s_b[0] if s0 is None else s0
        end[i] = p.value_at(h)
        k = int(np.searchsorted(p.times, h + 1e-9))
        sup[i] = np.max(np.abs(p.s_b[:k] - ref))
    ref = np.array([p.s_b[0] for p in paths]) if s0 is None else s0
    dev = end - ref

    def m_se(v):
        return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    mean, mean_se = m_se(end)
    a1, a1_se = m_se(np.abs(dev))
    a2, a2_se = m_se(dev ** 2)
    s1, s1_se = m_se(sup)
    s2, s2_se = m_se(sup ** 2)
    return MomentEstimate(h, n, mean, mean_se, a1, a1_se, a2, a2_se, s1, s1_se, s2, s2_se)


def classify_martingale(model: ModelSpec, state: Optional[MarketState] = None, tol: float = 1e-12) -> str:
    """``"sub"``, ``"super"``, ``"martingale"`` or ``"neither"`` for the bid with no trading.

    Uses the expected rate of change of the bid at ``state`` (compensated jumps
    plus the nu = 0 drift); with mean reversion the answer is local to the
    state. For a custom model it is ``"neither"`` unless the drift is zero.
    """
    s = state.s_b if state is not None else model.s_bar
    d = state.delta if state is not None else model.delta_bar
    up, down = model.bid_up.mean_rate(), model.bid_down.mean_rate()
    if model.family is Family.MEAN_REVERTING:
        rate = model.kappa_b * (model.s_bar - s) + up - down
    elif model.family is Family.GEOMETRIC:
        rate = s * (up - down)
    else:
        ds, _, _, _ = drift(model, MarketState(0.0, 0.0, s, d), ControlPair())
        if ds != 0:
            return "neither"
        rate = up - down
    scale = tol * max(1.0, abs(s))
    if rate > scale:
        return "sub"
    if rate < -scale:
        return "super"
    return "martingale"


def write_paths_csv(paths: Iterable[PathRecord], fh, with_path_id: bool = True) -> None:
    """Long-format CSV, one row per recorded sample."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow((("path_id",) if with_path_id else ()) + CSV_COLUMNS)
    for i, p in enumerate(paths):
        mid, ask = p.mid, p.ask
        for k in range(len(p.times)):
            row = (p.times[k], p.x[k], p.s_b[k], p.delta[k], mid[k], ask[k], p.w[k], p.nu[k], p.eta[k])
            writer.writerow(((i,) if with_path_id else ()) + tuple(repr(float(v)) for v in row))
