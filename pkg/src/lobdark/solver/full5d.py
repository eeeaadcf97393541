"""Unreduced (t, x, s_b, delta, w) solver for tiny grids.

This is a verification path, written with plain loops and no shared
machinery from the reduced solver beyond the model primitives. It keeps the
cash axis explicitly: cash enters through the lit-pool cash rate
``nu (s_b - beta nu)`` (upwinded in ``w``) and through dark fills, whose
destinations are interpolated in both ``x`` and ``w``. The cash axis is
extended linearly beyond its faces and uses inward differences there, so any
value that is affine in cash is represented without error.

Only the grid search over ``nu`` is supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..models import PRICE_CHANNELS, ModelSpec, ObjectiveSpec, price_jump

__all__ = ["FullGrid", "FullSolution", "solve_full"]


@dataclass(frozen=True)
class FullGrid:
    x: np.ndarray
    s: np.ndarray
    d: np.ndarray
    w: np.ndarray
    n_t: int
    n_nu: int = 2
    n_eta: int = 2


@dataclass
class FullSolution:
    t: np.ndarray
    v: np.ndarray  # (n_t, n_x, n_s, n_d, n_w)
    nu: np.ndarray
    eta: np.ndarray


def _lin(axis, v):
    """Index pair and weights on a uniform axis, clamped to the end nodes."""
    n = len(axis)
    if n == 1:
        return 0, 0, 1.0, 0.0
    v = min(max(v, axis[0]), axis[-1])
    pos = (v - axis[0]) / (axis[1] - axis[0])
    i = min(int(math.floor(pos)), n - 2)
    f = pos - i
    return i, i + 1, 1.0 - f, f


def _lin_extrap(axis, v):
    """Like ``_lin`` but extrapolates linearly from the end cells."""
    h = axis[1] - axis[0]
    pos = (v - axis[0]) / h
    i = min(max(int(math.floor(pos)), 0), len(axis) - 2)
    f = pos - i
    return i, i + 1, 1.0 - f, f


def solve_full(model: ModelSpec, obj: ObjectiveSpec, grid: FullGrid) -> FullSolution:
    x_ax, s_ax, d_ax, w_ax = grid.x, grid.s, grid.d, grid.w
    nx, ns, nd, nw = len(x_ax), len(s_ax), len(d_ax), len(w_ax)
    T = model.horizon
    t_ax = np.linspace(0.0, T, grid.n_t)
    dt = t_ax[1] - t_ax[0]
    hx = x_ax[1] - x_ax[0]
    hs = s_ax[1] - s_ax[0]
    hd = d_ax[1] - d_ax[0] if nd > 1 else 1.0
    hw = w_ax[1] - w_ax[0]
    cap = model.control_cap
    nu_grid = [cap * k / (grid.n_nu - 1) for k in range(grid.n_nu)]
    dark = model.dark_fill
    dz, dwq = dark.marks.quadrature()
    lam_w = dark.intensity

    v = np.zeros((grid.n_t, nx, ns, nd, nw))
    nu_star = np.zeros_like(v)
    eta_star = np.zeros_like(v)
    for i in range(nx):
        for j in range(ns):
            for k in range(nd):
                for m in range(nw):
                    x = x_ax[i]
                    v[-1, i, j, k, m] = w_ax[m] + (s_ax[j] - obj.alpha * x) * x

    # price-jump destinations do not depend on the value: tabulate them once
    jump_dest = {}
    for j in range(ns):
        for k in range(nd):
            entries = []
            for ch in PRICE_CHANNELS:
                spec = model.jump(ch)
                if not spec.active:
                    continue
                z, wq = spec.marks.quadrature()
                for zq, wz in zip(z, wq):
                    s2, d2 = price_jump(model, ch, s_ax[j], d_ax[k], zq)
                    s2, d2 = max(float(s2), 0.0), max(float(d2), 0.0)
                    entries.append((spec.intensity * wz, _lin(s_ax, s2), _lin(d_ax, d2)))
            jump_dest[j, k] = entries

    def value_at(V, i, js, kd, m):
        j0, j1, a0, a1 = js
        k0, k1, b0, b1 = kd
        return (
            a0 * b0 * V[i, j0, k0, m]
            + a0 * b1 * V[i, j0, k1, m]
            + a1 * b0 * V[i, j1, k0, m]
            + a1 * b1 * V[i, j1, k1, m]
        )

    def value_xw(V, x, j, k, w):
        i0, i1, p0, p1 = _lin(x_ax, x)
        m0, m1, q0, q1 = _lin_extrap(w_ax, w)
        return (
            p0 * q0 * V[i0, j, k, m0]
            + p0 * q1 * V[i0, j, k, m1]
            + p1 * q0 * V[i1, j, k, m0]
            + p1 * q1 * V[i1, j, k, m1]
        )

    for n in range(grid.n_t - 2, -1, -1):
        V = v[n + 1]
        for i in range(nx):
            x = x_ax[i]
            for j in range(ns):
                s = s_ax[j]
                for k in range(nd):
                    d = d_ax[k]
                    mid = s + 0.5 * d
                    for m in range(nw):
                        here = V[i, j, k, m]
                        if i == 0:
                            v[n, i, j, k, m] = w_ax[m]
                            continue
                        jumps = 0.0
                        for rate_w, js, kd in jump_dest[j, k]:
                            jumps += rate_w * (value_at(V, i, js, kd, m) - here)
                        vs_f = (V[i, j + 1, k, m] - here) / hs if j + 1 < ns else 0.0
                        vs_b = (here - V[i, j - 1, k, m]) / hs if j > 0 else 0.0
                        vd_f = (V[i, j, k + 1, m] - here) / hd if k + 1 < nd else 0.0
                        vd_b = (here - V[i, j, k - 1, m]) / hd if k > 0 else 0.0
                        vx_b = (here - V[i - 1, j, k, m]) / hx
                        vw_f = (V[i, j, k, m + 1] - here) / hw if m + 1 < nw else (here - V[i, j, k, m - 1]) / hw
                        vw_b = (here - V[i, j, k, m - 1]) / hw if m > 0 else (V[i, j, k, m + 1] - here) / hw

                        best_lit, best_nu = -math.inf, 0.0
                        for nu in nu_grid:
                            if model.family.value == "mean_reverting":
                                a = model.kappa_b * (model.s_bar - s - model.mu_b * nu)
                                b = model.kappa_delta * (model.delta_bar - d + model.mu_delta * nu)
                            else:
                                a = -model.mu_b * nu * s
                                b = model.mu_delta * nu * d
                            cash = nu * (s - model.beta * nu)
                            val = (
                                a * (vs_f if a > 0 else vs_b)
                                + b * (vd_f if b > 0 else vd_b)
                                - nu * vx_b
                                + cash * (vw_f if cash > 0 else vw_b)
                            )
                            if val > best_lit:
                                best_lit, best_nu = val, nu

                        best_dark, best_eta = 0.0, 0.0
                        if lam_w > 0:
                            top = min(model.posting_cap, x)
                            best_dark = -math.inf
                            for e in range(grid.n_eta):
                                eta = top * e / (grid.n_eta - 1)
                                acc = 0.0
                                for zq, wz in zip(dz, dwq):
                                    acc += wz * (value_xw(V, x - eta * zq, j, k, w_ax[m] + eta * zq * mid) - here)
                                val = lam_w * acc
                                if val > best_dark:
                                    best_dark, best_eta = val, eta

                        ham = -obj.gamma * x * x + best_lit + best_dark + jumps - obj.r * here
                        v[n, i, j, k, m] = here + dt * ham
                        nu_star[n, i, j, k, m] = best_nu
                        eta_star[n, i, j, k, m] = best_eta
    return FullSolution(t_ax, v, nu_star, eta_star)
