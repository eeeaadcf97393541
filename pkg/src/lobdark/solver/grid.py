"""Grid, value and policy containers for the backward solver."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..models import ModelSpec

__all__ = ["GridSpec", "Axes", "ValueGrid", "PolicyGrid", "StabilityError", "NonFiniteError"]


class StabilityError(RuntimeError):
    """Explicit step exceeds the monotonicity (CFL) bound."""

    def __init__(self, dt: float, max_dt: float):
        super().__init__(f"time step {dt:.6g}s exceeds the stable maximum {max_dt:.6g}s")
        self.dt = dt
        self.max_dt = max_dt


class NonFiniteError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Node counts and bounds of the (t, x, s_b, delta) grid.

    ``n_t = 0`` picks the smallest number of time nodes that satisfies the
    stability bound. ``n_d = 1`` is allowed only with ``d_max == d_min`` (a
    spread pinned at a single value). ``nu_mode`` selects how the lit rate is
    optimised: ``"vertex"`` (exact maximisation of the piecewise quadratic)
    or ``"grid"`` (search over ``n_nu`` equispaced rates).
    """

    n_x: int = 21
    n_s: int = 11
    n_d: int = 5
    s_min: float = 0.0
    s_max: float = 1.0
    d_max: float = 1.0
    d_min: float = 0.0
    n_t: int = 0
    n_nu: int = 2
    n_eta: int = 11
    nu_mode: str = "vertex"

    def __post_init__(self):
        for name in ("n_x", "n_s", "n_nu", "n_eta"):
            if getattr(self, name) < 2:
                raise ValueError(f"{name} must be >= 2")
        if self.n_t != 0 and self.n_t < 2:
            raise ValueError("n_t must be 0 (auto) or >= 2")
        if self.n_d < 1 or (self.n_d == 1 and self.d_max != self.d_min):
            raise ValueError("n_d must be >= 2 unless the spread axis is pinned (d_min == d_max)")
        if not (0.0 <= self.s_min < self.s_max):
            raise ValueError("need 0 <= s_min < s_max")
        if not (0.0 <= self.d_min <= self.d_max) or (self.n_d >= 2 and self.d_min == self.d_max):
            raise ValueError("need 0 <= d_min < d_max")
        if self.nu_mode not in ("vertex", "grid"):
            raise ValueError(f"nu_mode must be 'vertex' or 'grid', got {self.nu_mode!r}")

    def with_(self, **changes) -> "GridSpec":
        return replace(self, **changes)

    def spatial_axes(self, model: ModelSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.linspace(0.0, model.inventory_cap, self.n_x)
        s = np.linspace(self.s_min, self.s_max, self.n_s)
        d = np.linspace(self.d_min, self.d_max, self.n_d) if self.n_d > 1 else np.array([self.d_min])
        return x, s, d


@dataclass(frozen=True)
class Axes:
    t: np.ndarray
    x: np.ndarray
    s: np.ndarray
    d: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (len(self.t), len(self.x), len(self.s), len(self.d))

    def time_index(self, t: float) -> int:
        """Slice whose control is in force at time ``t`` (left-closed intervals)."""
        n = len(self.t)
        k = int(math.floor(t / self.dt + 1e-9))
        return min(max(k, 0), n - 1)


@dataclass
class ValueGrid:
    """Reduced value ``u(t, x, s_b, delta)``; the full value is ``w + u``."""

    grid: GridSpec
    axes: Axes
    u: np.ndarray

    def at(self, t_index: int, x: float, s_b: float, delta: float) -> float:
        from .operators import interp_xsd

        return float(interp_xsd(self.u[t_index], self.axes, x, s_b, delta))


@dataclass
class PolicyGrid:
    """Argmax controls. ``nu[n]``/``eta[n]`` are in force over ``[t_n, t_{n+1})``."""

    grid: GridSpec
    axes: Axes
    nu: np.ndarray
    eta: np.ndarray
    control_cap: float = 1.0
    meta: dict = field(default_factory=dict)
