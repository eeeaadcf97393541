"""``lobdark`` command-line front end.

Subcommands::

    lobdark simulate  --scenario S --out DIR [--paths K] [--seed N] [--threads T]
    lobdark solve     --scenario S --out DIR
    lobdark evaluate  --scenario S --out DIR [--paths K] [--seed N] [--threads T]
    lobdark validate  --scenario S --suite NAME [--out DIR] [--paths K] [--seed N] [--threads T]
    lobdark reproduce FIGURE_ID --out DIR [--seed N] [--threads T]
    lobdark list

``--scenario`` takes a TOML file or the name of a bundled scenario. The
thread count comes from ``--threads``, else the ``LOBDARK_THREADS``
environment variable, else 1; it never changes any output.

Exit codes:

    0  success
    2  usage or scenario schema error (including unknown suite or figure id)
    3  numerical abort (unstable time step, non-finite value, simulation failure)
    4  a validation suite failed
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .figures import reproduce, resolve_figure_ids, simulate_scenario
from .models import ControlPair
from .pathsim import SimulationError, write_paths_csv
from .policy import PolicyFn, evaluate_policy
from .scenario import SchemaError, Scenario, bundled_scenarios, load_scenario
from .solver import NonFiniteError, StabilityError, solve_backward
from .solver.io import export_slice, save_solution
from .validation import SUITES, run_suite

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_SCHEMA", "EXIT_NUMERICAL", "EXIT_VALIDATION"]

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_NUMERICAL = 3
EXIT_VALIDATION = 4

THREADS_ENV = "LOBDARK_THREADS"

log = logging.getLogger("lobdark")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lobdark", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"lobdark {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True, out_required=True, mc=True):
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario TOML file or bundled name")
        p.add_argument("--out", required=out_required, type=Path, help="output directory")
        p.add_argument("--threads", type=_positive_int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
        if mc:
            p.add_argument("--seed", type=_seed, help="override sim.seed")
            p.add_argument("--paths", type=_positive_int, help="override the number of Monte Carlo paths")

    common(sub.add_parser("simulate", help="simulate book paths to CSV"))
    common(sub.add_parser("solve", help="solve the control problem to a grid container"), mc=False)
    common(sub.add_parser("evaluate", help="Monte Carlo value of the solved policy and a benchmark"))
    p = sub.add_parser("validate", help="run a property suite")
    common(p, out_required=False)
    p.add_argument("--suite", required=True, help=f"one of: {', '.join(SUITES)}")
    p = sub.add_parser("reproduce", help="write plot-ready CSV data for a figure")
    p.add_argument("figure_id", help="bundled figure scenario name or group, e.g. fig5 or fig8")
    common(p, scenario=False, mc=False)
    p.add_argument("--seed", type=_seed, help="override sim.seed")
    sub.add_parser("list", help="list bundled scenarios")
    return parser


def resolve_threads(flag: Optional[int]) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
        if value <= 0:
            raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        return value
    return 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "value") and type(obj).__module__.startswith("lobdark"):
        return obj.value
    return obj


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _manifest(command: str, sc: Optional[Scenario], files: Sequence[Path], out: Path, **extra) -> dict:
    """Everything needed to rerun: scenario digest and contents, seed, version.

    Thread count and wall time are left out on purpose so that reruns with
    different thread counts produce identical directories.
    """
    data = {"command": command, "version": __version__, "numpy": np.__version__, **extra}
    if sc is not None:
        data["scenario"] = {
            "name": sc.name,
            "source": Path(sc.source).name if sc.source else None,
            "sha256": sc.sha256,
            "resolved": sc.raw,
            "sim": asdict(sc.sim),
            "sim_policy": sc.sim_policy,
        }
    data["outputs"] = sorted(str(Path(f).relative_to(out)) for f in files)
    return data


def _load(args) -> Scenario:
    sc = load_scenario(args.scenario)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "paths", None) is not None:
        changes["n_paths"] = args.paths
    if changes:
        sc.sim = replace(sc.sim, **changes)
    return sc


def _solve(sc: Scenario):
    value, policy, diag = solve_backward(sc.model, sc.objective, sc.require_grid())
    log.info("solved %s: %d steps in %.2fs", sc.name, diag.n_steps, diag.seconds)
    return value, policy, diag


def _diag_dict(diag) -> dict:
    d = diag.as_dict()
    d.pop("seconds", None)
    d["residual"] = diag.residual
    return d


def cmd_simulate(args, threads: int) -> int:
    sc = _load(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    paths = simulate_scenario(sc, threads)
    files = [out / "paths.csv"]
    with open(files[0], "w", newline="") as fh:
        write_paths_csv(paths, fh)
    files.append(out / "manifest.json")
    _write_json(files[-1], _manifest("simulate", sc, files, out, seed=sc.sim.seed, n_paths=sc.sim.n_paths))
    return EXIT_OK


def cmd_solve(args, threads: int) -> int:
    sc = _load(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    value, policy, diag = _solve(sc)
    files = []
    if sc.outputs.get("container", True):
        files.append(out / "solution.lobd")
        meta = {"scenario": sc.name, "scenario_sha256": sc.sha256, "diagnostics": _diag_dict(diag)}
        save_solution(files[-1], value, policy, _jsonable(meta))
    if sc.outputs.get("csv", True):
        files.append(out / "policy_t0.csv")
        with open(files[-1], "w", newline="") as fh:
            export_slice(fh, policy.axes, {"nu": policy.nu, "eta": policy.eta, "u": value.u}, {"t": 0.0, "x": sc.start.x})
    files.append(out / "diagnostics.json")
    _write_json(files[-1], _diag_dict(diag))
    files.append(out / "manifest.json")
    _write_json(files[-1], _manifest("solve", sc, files, out))
    return EXIT_OK


class _ConstantRate:
    """Sell at the rate that empties the starting inventory by the horizon; no dark posting."""

    def __init__(self, rate: float):
        self.rate = rate

    def __call__(self, t, state):
        return ControlPair(self.rate if state.x > 0 else 0.0, 0.0)


def cmd_evaluate(args, threads: int) -> int:
    sc = _load(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    value, policy, diag = _solve(sc)
    st = sc.start
    cfg = replace(sc.sim, forced_fill_times=None, dt_max=min(sc.sim.dt_max, policy.axes.dt))
    solver_value = value.at(0, st.x, st.s_b, st.delta) + st.w
    policies = {
        "optimal": PolicyFn(policy, sc.model),
        "constant_rate": _ConstantRate(min(st.x / sc.model.horizon, sc.model.control_cap)),
    }
    report = {"solver_value": solver_value, "n_paths": cfg.n_paths, "seed": cfg.seed, "policies": {}}
    for name, pol in policies.items():
        res = evaluate_policy(sc.model, sc.objective, pol, st, cfg, threads=threads)
        report["policies"][name] = {"mean": res.mean, "se": res.se}
    files = [out / "evaluation.json"]
    _write_json(files[0], report)
    files.append(out / "manifest.json")
    _write_json(files[-1], _manifest("evaluate", sc, files, out, seed=cfg.seed, n_paths=cfg.n_paths))
    print(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args, threads: int) -> int:
    if args.suite not in SUITES:
        raise UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
    sc = load_scenario(args.scenario)
    result = run_suite(args.suite, sc, n_paths=args.paths, seed=args.seed, threads=threads)
    data = result.as_dict()
    text = json.dumps(_jsonable(data), indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        files = [args.out / "validation.json"]
        files[0].write_text(text + "\n")
        files.append(args.out / "manifest.json")
        _write_json(files[-1], _manifest("validate", sc, files, args.out, suite=args.suite, seed=args.seed, n_paths=args.paths))
    status = "PASS" if result.passed else "FAIL"
    print(f"{status} {args.suite} on {sc.name}" + (f": {result.message}" if result.message else ""), file=sys.stderr)
    return EXIT_OK if result.passed else EXIT_VALIDATION


def cmd_reproduce(args, threads: int) -> int:
    try:
        names = resolve_figure_ids(args.figure_id)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    out = args.out
    files = reproduce(args.figure_id, out, threads=threads, seed=args.seed)
    scenarios = [load_scenario(n) for n in names]
    manifest = _manifest("reproduce", None, files + [out / "manifest.json"], out, figure_id=args.figure_id, seed=args.seed)
    manifest["scenarios"] = [{"name": s.name, "sha256": s.sha256} for s in scenarios]
    _write_json(out / "manifest.json", manifest)
    for f in files:
        print(f)
    return EXIT_OK


def cmd_list(args, threads: int) -> int:
    for name in bundled_scenarios():
        print(f"{name:32s} {load_scenario(name).description}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "solve": cmd_solve,
    "evaluate": cmd_evaluate,
    "validate": cmd_validate,
    "reproduce": cmd_reproduce,
    "list": cmd_list,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = resolve_threads(getattr(args, "threads", None))
        return COMMANDS[args.command](args, threads)
    except (UsageError, SchemaError) as exc:
        print(f"lobdark: error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except FileNotFoundError as exc:
        print(f"lobdark: error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (StabilityError, NonFiniteError, SimulationError) as exc:
        print(f"lobdark: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
