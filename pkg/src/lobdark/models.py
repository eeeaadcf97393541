"""State, control and price-model definitions.

Two concrete families are provided for the best bid ``s_b`` and the spread
``delta``:

* ``MEAN_REVERTING``: additive jumps, drift ``kappa_b*(s_bar - s_b - mu_b*nu)``
  for the bid and ``kappa_delta*(delta_bar - delta + mu_delta*nu)`` for the
  spread.
* ``GEOMETRIC``: multiplicative jumps, drift ``-mu_b*nu*s_b`` and
  ``+mu_delta*nu*delta``.

A ``CUSTOM`` family accepts user callbacks with the same (vectorised)
signatures. Every family is finite-activity: each channel is a compound
Poisson process with bounded marks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Channel",
    "PRICE_CHANNELS",
    "ALL_CHANNELS",
    "Family",
    "MarkDistribution",
    "JumpSpec",
    "ModelSpec",
    "ObjectiveSpec",
    "MarketState",
    "ControlPair",
    "mid_price",
    "ask_price",
    "drift",
    "drift_coefficients",
    "price_jump",
    "jump_map",
    "terminal_reward",
    "running_reward",
]


class Channel(str, Enum):
    BID_UP = "bid_up"
    BID_DOWN = "bid_down"
    SPREAD_UP = "spread_up"
    SPREAD_DOWN = "spread_down"
    DARK_FILL = "dark_fill"


PRICE_CHANNELS = (Channel.BID_UP, Channel.BID_DOWN, Channel.SPREAD_UP, Channel.SPREAD_DOWN)
ALL_CHANNELS = PRICE_CHANNELS + (Channel.DARK_FILL,)


class Family(str, Enum):
    MEAN_REVERTING = "mean_reverting"
    GEOMETRIC = "geometric"
    CUSTOM = "custom"


# Gauss-Legendre nodes on [-1, 1]; uniform marks are integrated with 8 nodes.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class MarkDistribution:
    """Bounded mark law of a compound Poisson channel.

    ``kind`` is one of ``"uniform"`` (on ``[low, high]``), ``"point"`` (mass at
    ``low``) or ``"discrete"`` (``values`` with ``probs``).
    """

    kind: str
    low: float = 0.0
    high: float = 0.0
    values: tuple = ()
    probs: tuple = ()

    def __post_init__(self):
        if self.kind == "uniform":
            if not (0.0 <= self.low <= self.high) or not math.isfinite(self.high):
                raise ValueError(f"uniform marks need 0 <= low <= high < inf, got [{self.low}, {self.high}]")
        elif self.kind == "point":
            if not math.isfinite(self.low):
                raise ValueError("point mark must be finite")
            object.__setattr__(self, "high", self.low)
        elif self.kind == "discrete":
            vals = tuple(float(v) for v in self.values)
            ps = tuple(float(p) for p in self.probs)
            if not vals or len(vals) != len(ps):
                raise ValueError("discrete marks need matching non-empty values and probs")
            if any(p < 0 for p in ps) or abs(sum(ps) - 1.0) > 1e-12:
                raise ValueError(f"discrete mark probabilities must be >= 0 and sum to 1, got {sum(ps)!r}")
            if not all(math.isfinite(v) for v in vals):
                raise ValueError("discrete mark values must be finite")
            object.__setattr__(self, "values", vals)
            object.__setattr__(self, "probs", ps)
            object.__setattr__(self, "low", min(vals))
            object.__setattr__(self, "high", max(vals))
        else:
            raise ValueError(f"unknown mark distribution kind {self.kind!r}")

    @classmethod
    def uniform(cls, low: float, high: float) -> "MarkDistribution":
        return cls("uniform", float(low), float(high))

    @classmethod
    def point(cls, value: float) -> "MarkDistribution":
        return cls("point", float(value), float(value))

    @classmethod
    def discrete(cls, values: Sequence[float], probs: Sequence[float]) -> "MarkDistribution":
        return cls("discrete", values=tuple(values), probs=tuple(probs))

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and weights such that ``E[f(Z)] ~= sum(w * f(nodes))``."""
        if self.kind == "uniform":
            if self.high == self.low:
                return np.array([self.low]), np.array([1.0])
            half = 0.5 * (self.high - self.low)
            mid = 0.5 * (self.high + self.low)
            return mid + half * _GL_NODES, 0.5 * _GL_WEIGHTS
        if self.kind == "point":
            return np.array([self.low]), np.array([1.0])
        return np.array(self.values), np.array(self.probs)

    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.low + self.high)
        if self.kind == "point":
            return self.low
        return float(np.dot(self.values, self.probs))

    def moment(self, p: int) -> float:
        if self.kind == "uniform":
            if self.high == self.low:
                return self.low**p
            return (self.high ** (p + 1) - self.low ** (p + 1)) / ((p + 1) * (self.high - self.low))
        if self.kind == "point":
            return self.low**p
        return float(np.dot(np.power(self.values, p), self.probs))

    def contains(self, z: float) -> bool:
        if self.kind == "discrete":
            return any(abs(z - v) <= 1e-12 for v in self.values)
        return self.low - 1e-12 <= z <= self.high + 1e-12

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size)
        if self.kind == "point":
            return np.full(size, self.low)
        return rng.choice(np.array(self.values), size=size, p=np.array(self.probs))


@dataclass(frozen=True)
class JumpSpec:
    intensity: float = 0.0
    marks: MarkDistribution = field(default_factory=lambda: MarkDistribution.point(0.0))

    def __post_init__(self):
        if not (math.isfinite(self.intensity) and self.intensity >= 0):
            raise ValueError(f"jump intensity must be finite and >= 0, got {self.intensity!r}")

    @property
    def active(self) -> bool:
        return self.intensity > 0

    def mean_rate(self) -> float:
        """Expected mark per unit time, ``lambda * E[z]``."""
        return self.intensity * self.marks.mean()


OFF = JumpSpec()

# Custom callbacks, vectorised over numpy arrays:
#   drift(s_b, delta, nu) -> (ds_b/dt, ddelta/dt)
#   jump(channel, s_b, delta, mark) -> (s_b', delta')
DriftFn = Callable[[np.ndarray, np.ndarray, np.ndarray], tuple]
JumpFn = Callable[[Channel, np.ndarray, np.ndarray, np.ndarray], tuple]


@dataclass(frozen=True)
class ModelSpec:
    family: Family = Family.MEAN_REVERTING
    kappa_b: float = 0.0
    kappa_delta: float = 0.0
    s_bar: float = 0.0
    delta_bar: float = 0.0
    mu_b: float = 0.0
    mu_delta: float = 0.0
    beta: float = 0.0
    bid_up: JumpSpec = OFF
    bid_down: JumpSpec = OFF
    spread_up: JumpSpec = OFF
    spread_down: JumpSpec = OFF
    dark_fill: JumpSpec = OFF
    horizon: float = 60.0
    inventory_cap: float = 1.0
    control_cap: float = 1.0
    dark_cap: Optional[float] = None
    custom_drift: Optional[DriftFn] = field(default=None, compare=False, repr=False)
    custom_jump: Optional[JumpFn] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        for name in ("kappa_b", "kappa_delta", "beta", "s_bar", "delta_bar", "mu_b", "mu_delta"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
        for name in ("kappa_b", "kappa_delta", "beta", "s_bar", "delta_bar"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)!r}")
        if not (self.horizon > 0 and self.inventory_cap > 0 and self.control_cap > 0):
            raise ValueError("horizon, inventory_cap and control_cap must be positive")
        if self.dark_cap is not None and not self.dark_cap > 0:
            raise ValueError("dark_cap must be positive")
        if self.dark_fill.active and not (0.0 <= self.dark_fill.marks.low and self.dark_fill.marks.high <= 1.0):
            raise ValueError("dark-fill marks must lie in [0, 1]")
        if self.family is Family.CUSTOM and (self.custom_drift is None or self.custom_jump is None):
            raise ValueError("custom family needs custom_drift and custom_jump callbacks")

    def jump(self, channel: Channel) -> JumpSpec:
        return getattr(self, Channel(channel).value)

    def with_(self, **changes) -> "ModelSpec":
        return replace(self, **changes)

    @property
    def posting_cap(self) -> float:
        """Upper bound of the dark posting; the lit cap unless set separately."""
        return self.control_cap if self.dark_cap is None else self.dark_cap

    def feasible(self, control: "ControlPair", x: float) -> "ControlPair":
        return control.capped(self.control_cap, x, self.posting_cap)

    @property
    def total_price_intensity(self) -> float:
        return sum(self.jump(c).intensity for c in PRICE_CHANNELS)


@dataclass(frozen=True)
class ObjectiveSpec:
    """``E[W(T) + (S_b(T) - alpha X(T)) X(T) - gamma * int X^2 du]``, discounted at ``r``."""

    gamma: float = 0.0
    alpha: float = 1.0
    r: float = 0.0

    def __post_init__(self):
        if not (self.gamma >= 0 and self.alpha > 0 and self.r >= 0):
            raise ValueError(f"need gamma >= 0, alpha > 0, r >= 0; got {self}")


@dataclass(frozen=True)
class MarketState:
    t: float
    x: float
    s_b: float
    delta: float
    w: float = 0.0

    @property
    def ask(self) -> float:
        return self.s_b + self.delta

    @property
    def mid(self) -> float:
        return self.s_b + 0.5 * self.delta

    def check(self, model: Optional[ModelSpec] = None) -> "MarketState":
        vals = (self.t, self.x, self.s_b, self.delta, self.w)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite state {self}")
        if self.x < 0 or self.s_b < 0 or self.delta < 0 or self.t < 0:
            raise ValueError(f"infeasible state {self}")
        if model is not None and (self.t > model.horizon + 1e-9 or self.x > model.inventory_cap + 1e-9):
            raise ValueError(f"state {self} outside [0, T] x [0, X]")
        return self


@dataclass(frozen=True)
class ControlPair:
    nu: float = 0.0
    eta: float = 0.0

    def capped(self, cap: float, x: float, eta_cap: Optional[float] = None) -> "ControlPair":
        """Project onto ``[0, cap] x [0, min(eta_cap, x)]`` (``eta_cap`` defaults to ``cap``)."""
        eta_cap = cap if eta_cap is None else eta_cap
        nu = min(max(self.nu, 0.0), cap)
        eta = min(max(self.eta, 0.0), eta_cap, max(x, 0.0))
        return ControlPair(nu, eta)


def mid_price(state: MarketState) -> float:
    return state.s_b + 0.5 * state.delta


def ask_price(state: MarketState) -> float:
    return state.s_b + state.delta


def drift_coefficients(model: ModelSpec, s_b, delta):
    """Affine-in-``nu`` drift: ``ds/dt = a0 + a1*nu``, ``ddelta/dt = b0 + b1*nu``.

    Works on scalars or arrays. A custom drift is probed at ``nu = 0, 1`` and
    must be affine in ``nu``.
    """
    s_b = np.asarray(s_b, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if model.family is Family.MEAN_REVERTING:
        a0 = model.kappa_b * (model.s_bar - s_b)
        a1 = np.full_like(s_b, -model.kappa_b * model.mu_b)
        b0 = model.kappa_delta * (model.delta_bar - delta)
        b1 = np.full_like(delta, model.kappa_delta * model.mu_delta)
    elif model.family is Family.GEOMETRIC:
        a0 = np.zeros_like(s_b)
        a1 = -model.mu_b * s_b
        b0 = np.zeros_like(delta)
        b1 = model.mu_delta * delta
    else:
        zero = np.zeros(np.broadcast(s_b, delta).shape)
        a0, b0 = (np.asarray(v, dtype=float) for v in model.custom_drift(s_b, delta, zero))
        a_one, b_one = (np.asarray(v, dtype=float) for v in model.custom_drift(s_b, delta, zero + 1.0))
        a1, b1 = a_one - a0, b_one - b0
        n = model.control_cap
        a_n, b_n = (np.asarray(v, dtype=float) for v in model.custom_drift(s_b, delta, zero + n))
        if not (np.allclose(a_n, a0 + n * a1, rtol=1e-9, atol=1e-12) and np.allclose(b_n, b0 + n * b1, rtol=1e-9, atol=1e-12)):
            raise ValueError("custom drift is not affine in nu")
    return a0, a1, b0, b1


def drift(model: ModelSpec, state: MarketState, control: ControlPair) -> tuple[float, float, float, float]:
    """``(ds_b/dt, ddelta/dt, dx/dt, dw/dt)`` between jumps."""
    vals = (state.x, state.s_b, state.delta, control.nu, control.eta)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError(f"non-finite input: state={state}, control={control}")
    nu = control.nu
    if model.family is Family.MEAN_REVERTING:
        ds = model.kappa_b * (model.s_bar - state.s_b - model.mu_b * nu)
        dd = model.kappa_delta * (model.delta_bar - state.delta + model.mu_delta * nu)
    elif model.family is Family.GEOMETRIC:
        ds = -model.mu_b * nu * state.s_b
        dd = model.mu_delta * nu * state.delta
    else:
        ds, dd = model.custom_drift(np.float64(state.s_b), np.float64(state.delta), np.float64(nu))
        ds, dd = float(ds), float(dd)
    return ds, dd, -nu, nu * (state.s_b - model.beta * nu)


def price_jump(model: ModelSpec, channel: Channel, s_b, delta, mark):
    """Raw post-jump ``(s_b, delta)`` for a price channel; no clamping."""
    channel = Channel(channel)
    if model.family is Family.CUSTOM:
        return model.custom_jump(channel, s_b, delta, mark)
    if model.family is Family.MEAN_REVERTING:
        if channel is Channel.BID_UP:
            return s_b + mark, delta - mark
        if channel is Channel.BID_DOWN:
            return s_b - mark, delta + mark
        if channel is Channel.SPREAD_UP:
            return s_b + 0.0 * mark, delta + mark
        if channel is Channel.SPREAD_DOWN:
            return s_b + 0.0 * mark, delta - mark
    else:
        if channel is Channel.BID_UP:
            return s_b * (1.0 + mark), delta * (1.0 - mark)
        if channel is Channel.BID_DOWN:
            return s_b * (1.0 - mark), delta * (1.0 + mark)
        if channel is Channel.SPREAD_UP:
            return s_b + 0.0 * mark, delta * (1.0 + mark)
        if channel is Channel.SPREAD_DOWN:
            return s_b + 0.0 * mark, delta * (1.0 - mark)
    raise ValueError(f"{channel} is not a price channel")


def jump_map(
    model: ModelSpec,
    state: MarketState,
    channel: Channel,
    mark: float,
    control: Optional[ControlPair] = None,
) -> MarketState:
    """Post-jump state. Negative prices are clamped to zero.

    The dark-fill channel executes ``eta * mark`` shares at the mid-price and
    needs the posting in force (``control``).
    """
    try:
        channel = Channel(channel)
    except ValueError:
        raise ValueError(f"unknown channel {channel!r}") from None
    spec = model.jump(channel)
    if not spec.marks.contains(mark):
        raise ValueError(f"mark {mark!r} outside the support of {channel.value}")
    if channel is Channel.DARK_FILL:
        if control is None:
            raise ValueError("dark fill needs the posted quantity")
        executed = min(control.eta, state.x) * mark
        return replace(state, x=state.x - executed, w=state.w + executed * mid_price(state))
    s_b, delta = price_jump(model, channel, state.s_b, state.delta, mark)
    return replace(state, s_b=max(float(s_b), 0.0), delta=max(float(delta), 0.0))


def terminal_reward(obj: ObjectiveSpec, state: MarketState) -> float:
    return state.w + (state.s_b - obj.alpha * state.x) * state.x


def running_reward(obj: ObjectiveSpec, state: MarketState) -> float:
    return -obj.gamma * state.x**2
