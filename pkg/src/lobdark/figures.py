"""Plot-ready CSV data for each bundled figure scenario.

A figure id is either a bundled scenario name (``fig5_left``) or a group
prefix that expands to every scenario starting with it (``fig5`` gives
``fig5_left`` and ``fig5_right``). What gets written depends on the
scenario's ``[figure] kind``:

``paths``
    ``<id>_paths.csv``: simulated bid, mid and ask series (plus the other
    path columns) with no trading.
``strategy``
    ``<id>_lit.csv`` and ``<id>_dark.csv``: the optimal lit rate and dark
    posting over (t, x) at the starting book state; with ``sim.policy =
    "optimal"`` also ``<id>_path.csv``, a trajectory under that policy.
``surfaces``
    ``<id>_lit_t<T>.csv`` and ``<id>_dark_t<T>.csv``: the controls over
    (s_b, delta) at the fixed inventory, one pair per time in
    ``figure.times``.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .pathsim import ZERO_POLICY, simulate_paths, write_paths_csv
from .policy import PolicyFn
from .scenario import Scenario, bundled_scenarios, load_scenario
from .solver import solve_backward
from .solver.io import export_slice

__all__ = ["resolve_figure_ids", "reproduce_scenario", "reproduce", "simulate_scenario"]

log = logging.getLogger(__name__)


def resolve_figure_ids(figure_id: str) -> list[str]:
    """Bundled scenario names covered by ``figure_id``; raises ``KeyError`` if none."""
    names = bundled_scenarios()
    if figure_id in names:
        return [figure_id]
    group = [n for n in names if n.startswith(figure_id + "_")]
    if not group:
        raise KeyError(f"unknown figure id {figure_id!r}")
    return group


def _tag(t: float) -> str:
    return f"{t:g}".replace(".", "p")


def simulate_scenario(sc: Scenario, threads: int = 1, config=None, solution=None):
    """Paths under the scenario's simulation policy (solving first if it is ``optimal``)."""
    cfg = config or sc.sim
    if sc.sim_policy == "optimal":
        if solution is None:
            solution = solve_backward(sc.model, sc.objective, sc.require_grid())
        policy = PolicyFn(solution[1], sc.model)
    else:
        policy = ZERO_POLICY
    return simulate_paths(sc.model, policy, cfg, sc.start, threads=threads)


def reproduce_scenario(sc: Scenario, out_dir: Path, threads: int = 1) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = sc.figure.get("kind", "strategy")
    written: list[Path] = []

    def open_csv(name):
        path = out_dir / name
        written.append(path)
        return open(path, "w", newline="")

    if kind == "paths":
        paths = simulate_scenario(sc, threads)
        with open_csv(f"{sc.name}_paths.csv") as fh:
            write_paths_csv(paths, fh)
        return written

    solution = solve_backward(sc.model, sc.objective, sc.require_grid())
    value, policy, _ = solution
    axes = policy.axes
    fields = {"lit": {"nu": policy.nu}, "dark": {"eta": policy.eta}}
    if kind == "strategy":
        fixed = {"s_b": sc.start.s_b, "delta": sc.start.delta}
        for venue, field in fields.items():
            with open_csv(f"{sc.name}_{venue}.csv") as fh:
                export_slice(fh, axes, {**field, "u": value.u}, fixed)
        if sc.sim_policy == "optimal":
            paths = simulate_scenario(sc, threads, solution=solution)
            with open_csv(f"{sc.name}_path.csv") as fh:
                write_paths_csv(paths, fh)
    elif kind == "surfaces":
        inventory = float(sc.figure.get("inventory", sc.start.x))
        for t in sc.figure.get("times", [0.0]):
            for venue, field in fields.items():
                with open_csv(f"{sc.name}_{venue}_t{_tag(float(t))}.csv") as fh:
                    export_slice(fh, axes, field, {"t": float(t), "x": inventory})
    else:  # pragma: no cover - rejected by the scenario parser
        raise ValueError(f"unknown figure kind {kind!r}")
    return written


def reproduce(figure_id: str, out_dir, threads: int = 1, seed: Optional[int] = None) -> list[Path]:
    """Write the CSV data for ``figure_id`` into ``out_dir``; returns the files written."""
    written = []
    for name in resolve_figure_ids(figure_id):
        sc = load_scenario(name)
        if seed is not None:
            sc.sim = replace(sc.sim, seed=seed)
        log.info("reproducing %s", name)
        written += reproduce_scenario(sc, Path(out_dir), threads)
    return written
