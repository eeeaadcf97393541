"""Scenario files: a versioned TOML description of one run.

Layout::

    schema_version = 1
    name = "fig8"
    description = "..."

    [model]                 # ModelSpec scalars
    [model.jumps.bid_up]    # intensity + marks, one table per price channel
    [model.dark_fill]       # intensity + marks in [0, 1]
    [objective]             # gamma, alpha, r
    [start]                 # x, s_b, delta, w (t is always 0)
    [grid]                  # GridSpec fields
    [sim]                   # SimConfig fields
    [outputs]               # directory, csv, container
    [figure]                # what `reproduce` emits
    [validate]              # parameters of the validation suites

``marks`` is an inline table: ``{kind = "uniform", low = 0.0, high = 0.1}``,
``{kind = "point", value = 1.0}`` or ``{kind = "discrete", values = [...],
probs = [...]}``. Unknown keys anywhere are rejected, naming their location.
"""

from __future__ import annotations

import copy
import hashlib
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .models import Channel, JumpSpec, MarkDistribution, MarketState, ModelSpec, ObjectiveSpec, PRICE_CHANNELS
from .pathsim import SimConfig
from .solver.grid import GridSpec

__all__ = ["SchemaError", "Scenario", "load_scenario", "parse_scenario", "bundled_scenarios", "bundled_path", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

_NUM = (int, float)

_MODEL_KEYS = {
    "family": str,
    "kappa_b": _NUM,
    "kappa_delta": _NUM,
    "s_bar": _NUM,
    "delta_bar": _NUM,
    "mu_b": _NUM,
    "mu_delta": _NUM,
    "beta": _NUM,
    "horizon": _NUM,
    "inventory_cap": _NUM,
    "control_cap": _NUM,
    "dark_cap": _NUM,
    "jumps": dict,
    "dark_fill": dict,
}
_JUMP_KEYS = {"intensity": _NUM, "marks": dict}
_MARK_KEYS = {"kind": str, "low": _NUM, "high": _NUM, "value": _NUM, "values": list, "probs": list}
_OBJECTIVE_KEYS = {"gamma": _NUM, "alpha": _NUM, "r": _NUM}
_START_KEYS = {"x": _NUM, "s_b": _NUM, "delta": _NUM, "w": _NUM}
_GRID_KEYS = {
    "n_x": int,
    "n_s": int,
    "n_d": int,
    "s_min": _NUM,
    "s_max": _NUM,
    "d_min": _NUM,
    "d_max": _NUM,
    "n_t": int,
    "n_nu": int,
    "n_eta": int,
    "nu_mode": str,
}
_SIM_KEYS = {
    "n_paths": int,
    "dt_max": _NUM,
    "seed": int,
    "record_every": _NUM,
    "horizon": _NUM,
    "forced_fill_times": list,
    "policy": str,
}
_OUTPUT_KEYS = {"directory": str, "csv": bool, "container": bool}
_FIGURE_KEYS = {"kind": str, "times": list, "inventory": _NUM, "group": str}
_VALIDATE_KEYS = {
    "comparison_alphas": list,
    "moment_horizons": list,
    "moment_paths": int,
    "scaling_horizon": _NUM,
    "chi2_level": _NUM,
    "flatness_tolerance": _NUM,
    "margin": _NUM,
    "level_floor": _NUM,
    "dp_paths": int,
    "dp_rel_tol": _NUM,
}
_TOP_KEYS = {
    "schema_version": int,
    "name": str,
    "description": str,
    "model": dict,
    "objective": dict,
    "start": dict,
    "grid": dict,
    "sim": dict,
    "outputs": dict,
    "figure": dict,
    "validate": dict,
}
_REQUIRED = ("schema_version", "model", "objective", "start")
_FIGURE_KINDS = ("paths", "strategy", "surfaces")
_SIM_POLICIES = ("zero", "optimal")


class SchemaError(ValueError):
    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


def _check_table(table: Any, allowed: dict, where: str) -> dict:
    if not isinstance(table, dict):
        raise SchemaError(where, "expected a table")
    for key, value in table.items():
        loc = f"{where}.{key}" if where else key
        if key not in allowed:
            raise SchemaError(loc, "unknown key")
        want = allowed[key]
        if isinstance(value, bool) and want is not bool:
            raise SchemaError(loc, "expected a number or string, got a boolean")
        if not isinstance(value, want):
            names = "/".join(t.__name__ for t in (want if isinstance(want, tuple) else (want,)))
            raise SchemaError(loc, f"expected {names}, got {type(value).__name__}")
    return table


def _marks(table: dict, where: str) -> MarkDistribution:
    _check_table(table, _MARK_KEYS, where)
    kind = table.get("kind")
    try:
        if kind == "uniform":
            return MarkDistribution.uniform(float(table["low"]), float(table["high"]))
        if kind == "point":
            return MarkDistribution.point(float(table["value"]))
        if kind == "discrete":
            return MarkDistribution.discrete([float(v) for v in table["values"]], [float(p) for p in table["probs"]])
    except KeyError as exc:
        raise SchemaError(where, f"missing key {exc.args[0]!r} for {kind} marks") from None
    except ValueError as exc:
        raise SchemaError(where, str(exc)) from None
    raise SchemaError(f"{where}.kind", f"unknown mark kind {kind!r}")


def _jump(table: dict, where: str) -> JumpSpec:
    _check_table(table, _JUMP_KEYS, where)
    if "intensity" not in table:
        raise SchemaError(where, "missing key 'intensity'")
    marks = _marks(table["marks"], f"{where}.marks") if "marks" in table else MarkDistribution.point(0.0)
    try:
        return JumpSpec(float(table["intensity"]), marks)
    except ValueError as exc:
        raise SchemaError(where, str(exc)) from None


def _model(table: dict) -> ModelSpec:
    _check_table(table, _MODEL_KEYS, "model")
    kwargs = {k: (float(v) if isinstance(v, _NUM) else v) for k, v in table.items() if k not in ("jumps", "dark_fill")}
    jumps = table.get("jumps", {})
    _check_table(jumps, {c.value: dict for c in PRICE_CHANNELS}, "model.jumps")
    for ch in PRICE_CHANNELS:
        if ch.value in jumps:
            kwargs[ch.value] = _jump(jumps[ch.value], f"model.jumps.{ch.value}")
    if "dark_fill" in table:
        kwargs[Channel.DARK_FILL.value] = _jump(table["dark_fill"], "model.dark_fill")
    try:
        return ModelSpec(**kwargs)
    except ValueError as exc:
        raise SchemaError("model", str(exc)) from None


def _build(cls, table: dict, where: str):
    """Construct ``cls`` from an already checked table."""
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise SchemaError(where, str(exc)) from None


@dataclass
class Scenario:
    name: str
    model: ModelSpec
    objective: ObjectiveSpec
    start: MarketState
    grid: Optional[GridSpec]
    sim: SimConfig
    sim_policy: str = "zero"
    description: str = ""
    outputs: dict = field(default_factory=lambda: {"directory": "out", "csv": True, "container": True})
    figure: dict = field(default_factory=dict)
    validate: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)
    source: Optional[str] = None
    sha256: str = ""

    def require_grid(self) -> GridSpec:
        if self.grid is None:
            raise SchemaError("grid", "this command needs a [grid] section")
        return self.grid

    def with_objective(self, **changes) -> "Scenario":
        out = copy.copy(self)
        out.objective = ObjectiveSpec(**{**self.objective.__dict__, **changes})
        return out


def parse_scenario(doc: dict, source: Optional[str] = None, digest: str = "") -> Scenario:
    _check_table(doc, _TOP_KEYS, "")
    for key in _REQUIRED:
        if key not in doc:
            raise SchemaError(key, "missing required section")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError("schema_version", f"unsupported version {doc['schema_version']!r} (expected {SCHEMA_VERSION})")
    model = _model(doc["model"])
    objective = _build(
        ObjectiveSpec,
        {k: float(v) for k, v in _check_table(doc["objective"], _OBJECTIVE_KEYS, "objective").items()},
        "objective",
    )
    start_tbl = _check_table(doc["start"], _START_KEYS, "start")
    for key in ("x", "s_b", "delta"):
        if key not in start_tbl:
            raise SchemaError(f"start.{key}", "missing key")
    try:
        start = MarketState(0.0, **{k: float(v) for k, v in start_tbl.items()}).check(model)
    except ValueError as exc:
        raise SchemaError("start", str(exc)) from None
    grid = None
    if "grid" in doc:
        tbl = dict(_check_table(doc["grid"], _GRID_KEYS, "grid"))
        grid = _build(GridSpec, tbl, "grid")
    sim_tbl = dict(_check_table(doc.get("sim", {}), _SIM_KEYS, "sim"))
    policy = sim_tbl.pop("policy", "zero")
    if policy not in _SIM_POLICIES:
        raise SchemaError("sim.policy", f"expected one of {_SIM_POLICIES}, got {policy!r}")
    if "forced_fill_times" in sim_tbl:
        sim_tbl["forced_fill_times"] = tuple(sim_tbl["forced_fill_times"])
    sim = _build(SimConfig, sim_tbl, "sim")
    outputs = {"directory": "out", "csv": True, "container": True}
    outputs.update(_check_table(doc.get("outputs", {}), _OUTPUT_KEYS, "outputs"))
    figure = dict(_check_table(doc.get("figure", {}), _FIGURE_KEYS, "figure"))
    if "kind" in figure and figure["kind"] not in _FIGURE_KINDS:
        raise SchemaError("figure.kind", f"expected one of {_FIGURE_KINDS}, got {figure['kind']!r}")
    validate = dict(_check_table(doc.get("validate", {}), _VALIDATE_KEYS, "validate"))
    if "comparison_alphas" in validate and len(validate["comparison_alphas"]) != 2:
        raise SchemaError("validate.comparison_alphas", "expected two values")
    return Scenario(
        name=doc.get("name", Path(source).stem if source else "scenario"),
        model=model,
        objective=objective,
        start=start,
        grid=grid,
        sim=sim,
        sim_policy=policy,
        description=doc.get("description", ""),
        outputs=outputs,
        figure=figure,
        validate=validate,
        raw=doc,
        source=source,
        sha256=digest,
    )


def load_scenario(path) -> Scenario:
    """Load a scenario from a path or a bundled scenario name (``fig8``)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and str(path) in bundled_scenarios():
        p = bundled_path(str(path))
    data = p.read_bytes()
    try:
        doc = tomllib.loads(data.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise SchemaError(str(p), f"invalid TOML: {exc}") from None
    return parse_scenario(doc, source=str(p), digest=hashlib.sha256(data).hexdigest())


def _scenario_dir():
    return resources.files("lobdark") / "scenarios"


def bundled_scenarios() -> list[str]:
    return sorted(f.name[:-5] for f in _scenario_dir().iterdir() if f.name.endswith(".toml"))


def bundled_path(name: str) -> Path:
    path = Path(str(_scenario_dir() / f"{name}.toml"))
    if not path.exists():
        raise KeyError(f"no bundled scenario {name!r}")
    return path
