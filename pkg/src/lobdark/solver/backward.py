"""Explicit backward sweep for the reduced HJB equation.

With ``r = 0`` the value is affine in cash, ``V = w + u(t, x, s_b, delta)``,
and ``u`` solves

    u_t + sup_{nu, eta} { -gamma x^2 + nu (s_b - beta nu) - nu u_x
                          + ds/dt(nu) u_s + ddelta/dt(nu) u_delta
                          + lambda_w E[u(x - eta z) - u + eta z mid] }
        + sum_channels lambda E[u(post-jump) - u] = 0,

with ``u(T) = (s_b - alpha x) x`` and ``u = 0`` on the depleted face ``x = 0``.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..models import ModelSpec, ObjectiveSpec
from .grid import Axes, GridSpec, NonFiniteError, PolicyGrid, StabilityError, ValueGrid
from .operators import Discretization, stable_dt

log = logging.getLogger(__name__)

__all__ = [
    "ReductionCertificate",
    "Diagnostics",
    "reduce_cash_dimension",
    "make_axes",
    "solve_backward",
    "discrete_residual",
    "interior_mask",
]


@dataclass(frozen=True)
class ReductionCertificate:
    valid: bool
    reason: str
    gamma: float
    alpha: float

    def running(self, x):
        return -self.gamma * np.asarray(x) ** 2

    def terminal(self, x, s_b):
        x = np.asarray(x)
        return (np.asarray(s_b) - self.alpha * x) * x


def reduce_cash_dimension(obj: ObjectiveSpec) -> ReductionCertificate:
    """Check whether ``V(t, x, s, d, w) = w + u(t, x, s, d)`` holds for ``obj``.

    Cash enters the objective linearly, its dynamics do not depend on cash and
    the running reward ignores it, so the only obstruction is discounting.
    """
    if obj.r > 0:
        return ReductionCertificate(False, "r > 0: discounting breaks additivity in cash", obj.gamma, obj.alpha)
    return ReductionCertificate(True, "r = 0 and terminal reward w + (s_b - alpha x) x", obj.gamma, obj.alpha)


@dataclass
class Diagnostics:
    dt: float
    max_stable_dt: float
    cfl_ratio: float
    n_steps: int
    clamp_counts: dict
    residual: np.ndarray
    max_residual: float
    reduction: str
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "dt": self.dt,
            "max_stable_dt": self.max_stable_dt,
            "cfl_ratio": self.cfl_ratio,
            "n_steps": self.n_steps,
            "clamp_counts": dict(self.clamp_counts),
            "max_residual": self.max_residual,
            "reduction": self.reduction,
            "seconds": self.seconds,
            **self.extra,
        }


def make_axes(model: ModelSpec, obj: ObjectiveSpec, grid: GridSpec) -> tuple[Axes, float]:
    """Resolve axes; returns them with the largest stable time step."""
    x, s, d = grid.spatial_axes(model)
    dt_max = stable_dt(model, obj, (x, s, d))
    T = model.horizon
    if grid.n_t == 0:
        n_steps = max(1, math.ceil(T / dt_max * (1.0 - 1e-12))) if math.isfinite(dt_max) else 1
        n_t = n_steps + 1
    else:
        n_t = grid.n_t
    t = np.linspace(0.0, T, n_t)
    return Axes(t, x, s, d), dt_max


def interior_mask(axes: Axes) -> np.ndarray:
    nx, ns, nd = len(axes.x), len(axes.s), len(axes.d)
    mask = np.zeros((nx, ns, nd), dtype=bool)
    d_sl = slice(1, nd - 1) if nd >= 3 else slice(None)
    mask[1:, 1 : ns - 1, d_sl] = True
    return mask


def solve_backward(
    model: ModelSpec,
    obj: ObjectiveSpec,
    grid: GridSpec,
    terminal: Optional[np.ndarray] = None,
) -> tuple[ValueGrid, PolicyGrid, Diagnostics]:
    """March the reduced value backwards from ``T`` with explicit Euler steps.

    ``terminal`` overrides the terminal slice (shape ``(n_x, n_s, n_d)``);
    the x = 0 face is reset to zero regardless.
    """
    started = time.perf_counter()
    cert = reduce_cash_dimension(obj)
    if not cert.valid:
        log.warning("%s; solving with cash flows discounted when received", cert.reason)
    axes, dt_max = make_axes(model, obj, grid)
    dt = axes.dt
    if dt > dt_max * (1.0 + 1e-12):
        raise StabilityError(dt, dt_max)
    disc = Discretization(model, obj, grid, axes)
    shape = axes.shape
    u = np.empty(shape)
    nu = np.empty(shape)
    eta = np.empty(shape)
    if terminal is None:
        X = axes.x[:, None, None]
        u[-1] = cert.terminal(X, disc.S[None]) + np.zeros(shape[1:])
    else:
        u[-1] = np.broadcast_to(terminal, shape[1:])
    u[-1, 0] = 0.0
    mask = interior_mask(axes)
    residual = np.zeros(shape[0])

    h_next, nu_next, eta_next = disc.hamiltonian(u[-1])
    nu[-1], eta[-1] = nu_next, eta_next
    for n in range(shape[0] - 2, -1, -1):
        u[n] = u[n + 1] + dt * h_next
        u[n, 0] = 0.0
        if not np.all(np.isfinite(u[n])):
            raise NonFiniteError(f"non-finite value at t={axes.t[n]:.6g}")
        nu[n], eta[n] = nu_next, eta_next
        h_next, nu_next, eta_next = disc.hamiltonian(u[n])
        r = (u[n + 1] - u[n]) / dt + h_next
        residual[n] = float(np.max(np.abs(r[mask]))) if mask.any() else 0.0

    diag = Diagnostics(
        dt=dt,
        max_stable_dt=dt_max,
        cfl_ratio=dt / dt_max if math.isfinite(dt_max) else 0.0,
        n_steps=shape[0] - 1,
        clamp_counts=disc.clamp_counts,
        residual=residual,
        max_residual=float(residual[:-1].max()) if shape[0] > 1 else 0.0,
        reduction="w + u" if cert.valid else "discounted cash flows",
        seconds=time.perf_counter() - started,
    )
    value = ValueGrid(grid, axes, u)
    policy = PolicyGrid(grid, axes, nu, eta, control_cap=model.control_cap)
    return value, policy, diag


def discrete_residual(value: ValueGrid, model: ModelSpec, obj: ObjectiveSpec) -> tuple[float, np.ndarray]:
    """Max |HJB residual| over interior nodes, per slice and overall.

    At slice ``n < n_t - 1`` the residual is ``(u^{n+1} - u^n)/dt + H[u^n]``;
    the terminal slice is not evaluated.
    """
    axes = value.axes
    disc = Discretization(model, obj, value.grid, axes)
    mask = interior_mask(axes)
    u = value.u
    dt = axes.dt
    out = np.zeros(len(axes.t))
    for n in range(len(axes.t) - 1):
        h, _, _ = disc.hamiltonian(u[n])
        r = (u[n + 1] - u[n]) / dt + h
        out[n] = float(np.max(np.abs(r[mask]))) if mask.any() else 0.0
    return float(out[:-1].max()), out
