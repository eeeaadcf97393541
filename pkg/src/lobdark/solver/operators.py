"""Discrete operators of the explicit upwind scheme.

Everything that does not change from one time step to the next (jump
destinations, interpolation weights, drift coefficients) is assembled once in
:class:`Discretization`; a time step then costs a handful of sparse products
and element-wise maximisations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..models import (
    PRICE_CHANNELS,
    Channel,
    ControlPair,
    ModelSpec,
    ObjectiveSpec,
    drift_coefficients,
    price_jump,
)
from .grid import Axes, GridSpec

__all__ = [
    "Discretization",
    "interp_weights",
    "interp_xsd",
    "upwind_differences",
    "apply_jump_operator",
    "optimize_hamiltonian",
    "stable_dt",
]


def interp_weights(axis: np.ndarray, values):
    """Linear interpolation on a uniform axis, clamping outside the range.

    Returns ``(i0, i1, w0, w1, clamped)``.
    """
    values = np.asarray(values, dtype=float)
    n = len(axis)
    if n == 1:
        zero = np.zeros(values.shape, dtype=np.intp)
        clamped = np.abs(values - axis[0]) > 1e-12
        return zero, zero, np.ones(values.shape), np.zeros(values.shape), clamped
    lo, hi = axis[0], axis[-1]
    h = (hi - lo) / (n - 1)
    tol = 1e-9 * h
    clamped = (values < lo - tol) | (values > hi + tol)
    pos = (np.clip(values, lo, hi) - lo) / h
    i0 = np.minimum(np.floor(pos).astype(np.intp), n - 2)
    frac = np.clip(pos - i0, 0.0, 1.0)
    return i0, i0 + 1, 1.0 - frac, frac, clamped


def interp_xsd(u3: np.ndarray, axes: Axes, x, s, d):
    """Trilinear interpolation of a ``(n_x, n_s, n_d)`` slice."""
    xi0, xi1, xw0, xw1, _ = interp_weights(axes.x, x)
    si0, si1, sw0, sw1, _ = interp_weights(axes.s, s)
    di0, di1, dw0, dw1, _ = interp_weights(axes.d, d)
    out = 0.0
    for xi, xw in ((xi0, xw0), (xi1, xw1)):
        for si, sw in ((si0, sw0), (si1, sw1)):
            for di, dw in ((di0, dw0), (di1, dw1)):
                out = out + xw * sw * dw * u3[xi, si, di]
    return out


def upwind_differences(u3: np.ndarray, axes: Axes):
    """One-sided differences of a ``(n_x, n_s, n_d)`` slice.

    Returns ``(ds_fwd, ds_bwd, dd_fwd, dd_bwd, dx_bwd)``. A difference that
    would need a node outside the grid is zero.
    """
    ds_fwd = np.zeros_like(u3)
    ds_bwd = np.zeros_like(u3)
    dd_fwd = np.zeros_like(u3)
    dd_bwd = np.zeros_like(u3)
    dx_bwd = np.zeros_like(u3)
    hs = axes.s[1] - axes.s[0]
    diff = (u3[:, 1:, :] - u3[:, :-1, :]) / hs
    ds_fwd[:, :-1, :] = diff
    ds_bwd[:, 1:, :] = diff
    if len(axes.d) > 1:
        hd = axes.d[1] - axes.d[0]
        diff = (u3[:, :, 1:] - u3[:, :, :-1]) / hd
        dd_fwd[:, :, :-1] = diff
        dd_bwd[:, :, 1:] = diff
    hx = axes.x[1] - axes.x[0]
    dx_bwd[1:] = (u3[1:] - u3[:-1]) / hx
    return ds_fwd, ds_bwd, dd_fwd, dd_bwd, dx_bwd


def stable_dt(model: ModelSpec, obj: ObjectiveSpec, axes_xsd: tuple) -> float:
    """Largest explicit step keeping every update a convex combination."""
    x, s, d = axes_xsd
    S, D = np.meshgrid(s, d, indexing="ij")
    a0, a1, b0, b1 = drift_coefficients(model, S, D)
    n = model.control_cap
    hs = s[1] - s[0]
    rate = 0.0
    for nu in (0.0, n):
        r_nu = np.abs(a0 + a1 * nu) / hs + nu / (x[1] - x[0])
        if len(d) > 1:
            r_nu = r_nu + np.abs(b0 + b1 * nu) / (d[1] - d[0])
        rate = max(rate, float(np.max(r_nu)))
    rate += model.total_price_intensity + model.dark_fill.intensity + obj.r
    return np.inf if rate == 0 else 1.0 / rate


@dataclass
class Discretization:
    """Precomputed pieces of the discrete Hamiltonian on one spatial grid."""

    model: ModelSpec
    obj: ObjectiveSpec
    grid: GridSpec
    axes: Axes
    jump_matrix: sp.csr_matrix = field(init=False)
    jump_rate: float = field(init=False)
    clamp_counts: dict = field(init=False)

    def __post_init__(self):
        m, ax = self.model, self.axes
        self.shape = (len(ax.x), len(ax.s), len(ax.d))
        S, D = np.meshgrid(ax.s, ax.d, indexing="ij")
        self.S, self.D = S, D
        self.mid = S + 0.5 * D
        self.a0, self.a1, self.b0, self.b1 = drift_coefficients(m, S, D)
        self.X = ax.x[:, None, None]
        self.running = -self.obj.gamma * self.X**2
        self.cap = m.control_cap
        self._build_jump_matrix()
        self._build_dark_matrix()
        if self.grid.nu_mode == "grid":
            self.nu_nodes = np.linspace(0.0, self.cap, self.grid.n_nu)

    # -- assembly ---------------------------------------------------------
    def _build_jump_matrix(self):
        ax = self.axes
        ns, nd = len(ax.s), len(ax.d)
        n_sd = ns * nd
        rows, cols, vals = [], [], []
        self.clamp_counts = {}
        self.jump_rate = 0.0
        node = np.arange(n_sd)
        Sf, Df = self.S.ravel(), self.D.ravel()
        for ch in PRICE_CHANNELS:
            spec = self.model.jump(ch)
            if not spec.active:
                self.clamp_counts[ch.value] = 0
                continue
            self.jump_rate += spec.intensity
            z, wq = spec.marks.quadrature()
            clamps = 0
            for zq, wz in zip(z, wq):
                s_new, d_new = price_jump(self.model, ch, Sf, Df, np.full(n_sd, zq))
                s_new = np.broadcast_to(np.asarray(s_new, dtype=float), (n_sd,))
                d_new = np.broadcast_to(np.asarray(d_new, dtype=float), (n_sd,))
                si0, si1, sw0, sw1, sc = interp_weights(ax.s, s_new)
                di0, di1, dw0, dw1, dc = interp_weights(ax.d, d_new)
                clamps += int(np.count_nonzero(sc | dc))
                for si, sw in ((si0, sw0), (si1, sw1)):
                    for di, dw in ((di0, dw0), (di1, dw1)):
                        rows.append(node)
                        cols.append(si * nd + di)
                        vals.append(spec.intensity * wz * sw * dw)
            self.clamp_counts[ch.value] = clamps
        if rows:
            mat = sp.coo_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_sd, n_sd)
            )
            self.jump_matrix = mat.tocsr()
            self.jump_matrix.sum_duplicates()
        else:
            self.jump_matrix = sp.csr_matrix((n_sd, n_sd))

    def _build_dark_matrix(self):
        ax, m = self.axes, self.model
        nx = len(ax.x)
        k = self.grid.n_eta
        frac = np.linspace(0.0, 1.0, k)
        self.eta_nodes = np.minimum(m.posting_cap, ax.x)[None, :] * frac[:, None]  # (n_eta, n_x)
        self.dark_rate = m.dark_fill.intensity
        z, wq = m.dark_fill.marks.quadrature()
        self.dark_mean_fill = m.dark_fill.marks.mean()
        rows, cols, vals = [], [], []
        for j in range(k):
            for zq, wz in zip(z, wq):
                dest = ax.x - self.eta_nodes[j] * zq
                i0, i1, w0, w1, _ = interp_weights(ax.x, dest)
                base = j * nx + np.arange(nx)
                rows += [base, base]
                cols += [i0, i1]
                vals += [wz * w0, wz * w1]
        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(k * nx, nx)
        )
        self.dark_matrix = mat.tocsr()
        self.dark_matrix.sum_duplicates()

    # -- pieces of the Hamiltonian ---------------------------------------
    def jump_term(self, u3: np.ndarray) -> np.ndarray:
        """``sum_channels lambda * E[u(post) - u]`` at every node."""
        nx = self.shape[0]
        flat = u3.reshape(nx, -1)
        expected = np.asarray(self.jump_matrix @ flat.T).T
        return expected.reshape(u3.shape) - self.jump_rate * u3

    def dark_candidates(self, u3: np.ndarray) -> np.ndarray:
        """Dark-pool term for every posting node, shape ``(n_eta, n_x, n_s, n_d)``."""
        nx = self.shape[0]
        k = self.grid.n_eta
        flat = u3.reshape(nx, -1)
        expected = np.asarray(self.dark_matrix @ flat).reshape((k,) + u3.shape)
        cash = (self.eta_nodes * self.dark_mean_fill)[:, :, None, None] * self.mid[None, None]
        return self.dark_rate * (expected - u3[None] + cash)

    def lit_objective(self, nu, diffs, drift_sign_s=None, drift_sign_d=None):
        """Lit-pool part of the Hamiltonian for rate(s) ``nu`` with upwinding."""
        ds_f, ds_b, dd_f, dd_b, dx_b = diffs
        a = self.a0 + self.a1 * nu
        b = self.b0 + self.b1 * nu
        us = np.where(a > 0, ds_f, ds_b)
        ud = np.where(b > 0, dd_f, dd_b)
        return nu * (self.S - self.model.beta * nu) - nu * dx_b + a * us + b * ud

    def best_lit(self, diffs, scale):
        """Maximise the lit objective node-wise. Returns ``(nu*, value)``."""
        if self.grid.nu_mode == "grid":
            cands = [np.broadcast_to(v, self.shape) for v in self.nu_nodes]
        else:
            cands = self._vertex_candidates(diffs)
        vals = [self.lit_objective(c, diffs) for c in cands]
        return _argmax_smallest(cands, vals, scale)

    def _vertex_candidates(self, diffs):
        ds_f, ds_b, dd_f, dd_b, dx_b = diffs
        n, beta = self.cap, self.model.beta
        shape = self.shape
        cands = [np.zeros(shape), np.full(shape, n)]
        with np.errstate(divide="ignore", invalid="ignore"):
            for a1, a0 in ((self.a1, self.a0), (self.b1, self.b0)):
                bp = np.where(a1 != 0, -a0 / a1, 0.0)
                bp = np.where(np.isfinite(bp), bp, 0.0)
                cands.append(np.broadcast_to(np.clip(bp, 0.0, n), shape))
        if beta > 0:
            for us in (ds_f, ds_b):
                for ud in (dd_f, dd_b):
                    slope = self.S - dx_b + self.a1 * us + self.b1 * ud
                    cands.append(np.clip(slope / (2.0 * beta), 0.0, n))
        return cands

    def hamiltonian(self, u3: np.ndarray):
        """Maximised Hamiltonian (without the time derivative) and its argmax.

        The x = 0 face is absorbing: value and controls are zero there.
        """
        diffs = upwind_differences(u3, self.axes)
        scale = 1e-12 * (1.0 + np.abs(u3))
        nu, lit = self.best_lit(diffs, scale)
        dark = self.dark_candidates(u3)
        eta_idx, dark_best = _argmax_smallest_index(dark, scale)
        eta = np.take_along_axis(
            np.broadcast_to(self.eta_nodes[:, :, None, None], dark.shape), eta_idx[None], axis=0
        )[0]
        h = self.running + lit + dark_best + self.jump_term(u3) - self.obj.r * u3
        h[0] = 0.0
        nu = np.array(nu, copy=True)
        nu[0] = 0.0
        eta = np.array(eta, copy=True)
        eta[0] = 0.0
        return h, nu, eta


def _argmax_smallest(cands, vals, scale):
    """Node-wise max over candidate controls; ties go to the smallest control."""
    vals = np.stack([np.broadcast_to(v, scale.shape) for v in vals])
    cands = np.stack([np.broadcast_to(c, scale.shape) for c in cands])
    best = vals.max(axis=0)
    ok = vals >= best - scale
    masked = np.where(ok, cands, np.inf)
    k = np.argmin(masked, axis=0)
    choice = np.take_along_axis(cands, k[None], axis=0)[0]
    value = np.take_along_axis(vals, k[None], axis=0)[0]
    return choice, value


def _argmax_smallest_index(vals, scale):
    """First index (smallest control) within ``scale`` of the node-wise max."""
    best = vals.max(axis=0)
    ok = vals >= best - scale
    k = np.argmax(ok, axis=0)
    return k, np.take_along_axis(vals, k[None], axis=0)[0]


def apply_jump_operator(
    u3: np.ndarray,
    axes: Axes,
    model: ModelSpec,
    node: tuple[int, int, int],
    channel: Channel,
    eta: float = 0.0,
) -> float:
    """``lambda * E[u(post-jump) - u(node)]`` for one channel at one node.

    For the dark channel the reduced value also collects the executed cash,
    ``eta * z * mid``.
    """
    channel = Channel(channel)
    i, j, k = node
    x, s, d = axes.x[i], axes.s[j], axes.d[k]
    spec = model.jump(channel)
    if not spec.active:
        return 0.0
    z, wq = spec.marks.quadrature()
    base = u3[i, j, k]
    if channel is Channel.DARK_FILL:
        eta = min(eta, model.posting_cap, x)
        dest = interp_xsd(u3, axes, x - eta * z, np.full_like(z, s), np.full_like(z, d))
        return float(spec.intensity * np.dot(wq, dest - base + eta * z * (s + 0.5 * d)))
    s_new, d_new = price_jump(model, channel, np.full_like(z, s), np.full_like(z, d), z)
    dest = interp_xsd(u3, axes, np.full_like(z, x), np.asarray(s_new, float), np.asarray(d_new, float))
    return float(spec.intensity * np.dot(wq, dest - base))


def optimize_hamiltonian(disc: Discretization, u3: np.ndarray, node: tuple[int, int, int]):
    """Argmax controls and maximised Hamiltonian at one node of a slice."""
    h, nu, eta = disc.hamiltonian(u3)
    return ControlPair(float(nu[node]), float(eta[node])), float(h[node])
