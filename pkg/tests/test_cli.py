import csv
import json
import re
from pathlib import Path

import pytest

from lobdark.cli import main
from lobdark.scenario import load_scenario
from lobdark.solver.io import load_solution

SMOKE_TEXT = Path(load_scenario("smoke").source).read_text()


def _tree(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def _smoke_variant(tmp_path, name, old, new):
    assert old in SMOKE_TEXT
    path = tmp_path / f"{name}.toml"
    path.write_text(SMOKE_TEXT.replace(old, new))
    return str(path)


def test_list_names_bundled_scenarios(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "fig1 " in out and "smoke " in out


def test_simulate_writes_paths_and_manifest(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--scenario", "fig1", "--out", str(out), "--paths", "3", "--seed", "11"]) == 0
    with open(out / "paths.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {"path_id", "time", "s_b", "mid", "ask"} <= set(rows[0])
    assert {r["path_id"] for r in rows} == {"0", "1", "2"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["scenario"]["sha256"] == load_scenario("fig1").sha256
    assert manifest["scenario"]["sim"]["seed"] == 11
    assert manifest["outputs"] == ["manifest.json", "paths.csv"]


def test_simulate_same_seed_is_byte_identical(tmp_path):
    args = ["simulate", "--scenario", "fig1", "--paths", "4", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    assert main(["simulate", "--scenario", "fig1", "--paths", "4", "--seed", "4", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "paths.csv").read_bytes() != (tmp_path / "c" / "paths.csv").read_bytes()


def test_thread_count_does_not_change_output(tmp_path, monkeypatch):
    args = ["simulate", "--scenario", "smoke", "--paths", "9"]
    assert main(args + ["--out", str(tmp_path / "one"), "--threads", "1"]) == 0
    monkeypatch.setenv("LOBDARK_THREADS", "3")
    assert main(args + ["--out", str(tmp_path / "env")]) == 0
    assert _tree(tmp_path / "one") == _tree(tmp_path / "env")


@pytest.mark.parametrize("bad", [["--paths", "0"], ["--threads", "0"], ["--seed", "-1"]])
def test_bad_flags_exit_2(tmp_path, bad):
    with pytest.raises(SystemExit) as err:
        main(["simulate", "--scenario", "fig1", "--out", str(tmp_path)] + bad)
    assert err.value.code == 2


def test_bad_thread_env_exits_2(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LOBDARK_THREADS", "many")
    assert main(["simulate", "--scenario", "fig1", "--paths", "1", "--out", str(tmp_path)]) == 2
    assert "LOBDARK_THREADS" in capsys.readouterr().err


def test_solve_writes_container_and_diagnostics(tmp_path):
    out = tmp_path / "solve"
    assert main(["solve", "--scenario", "smoke", "--out", str(out)]) == 0
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["max_residual"] >= 0 and "seconds" not in diag
    value, policy, meta = load_solution(out / "solution.lobd")
    assert value.u.shape == (8, 8, 8, 8) == policy.nu.shape
    assert meta["scenario"] == "smoke"
    with open(out / "policy_t0.csv") as fh:
        header = next(csv.reader(fh))
    assert set(header) >= {"s_b", "delta", "nu", "eta", "u"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outputs"] == ["diagnostics.json", "manifest.json", "policy_t0.csv", "solution.lobd"]


def test_malformed_scenario_exits_2_naming_the_key(tmp_path, capsys):
    path = _smoke_variant(tmp_path, "typo", "kappa_b = 0.5", "kapa_b = 0.5")
    assert main(["solve", "--scenario", path, "--out", str(tmp_path / "o")]) == 2
    assert "model.kapa_b" in capsys.readouterr().err


def test_missing_scenario_exits_2(tmp_path):
    assert main(["solve", "--scenario", str(tmp_path / "absent.toml"), "--out", str(tmp_path)]) == 2


def test_unstable_grid_exits_3(tmp_path, capsys):
    path = _smoke_variant(tmp_path, "coarse_time", "n_t = 8", "n_t = 2")
    assert main(["solve", "--scenario", path, "--out", str(tmp_path / "o")]) == 3
    assert "numerical abort" in capsys.readouterr().err


def test_evaluate_reports_both_policies(tmp_path, capsys):
    out = tmp_path / "eval"
    assert main(["evaluate", "--scenario", "smoke", "--out", str(out), "--paths", "50"]) == 0
    report = json.loads((out / "evaluation.json").read_text())
    assert set(report["policies"]) == {"optimal", "constant_rate"}
    assert report["n_paths"] == 50
    opt = report["policies"]["optimal"]
    assert abs(opt["mean"] - report["solver_value"]) <= max(0.05 * abs(report["solver_value"]), 4 * opt["se"])


def test_validate_exit_codes(tmp_path, capsys):
    assert main(["validate", "--suite", "comparison", "--scenario", "smoke"]) == 0
    swapped = _smoke_variant(tmp_path, "swapped", "comparison_alphas = [1.0, 0.5]", "comparison_alphas = [0.5, 1.0]")
    assert main(["validate", "--suite", "comparison", "--scenario", swapped, "--out", str(tmp_path / "v")]) == 4
    data = json.loads((tmp_path / "v" / "validation.json").read_text())
    assert data["passed"] is False
    assert "FAIL comparison" in capsys.readouterr().err
    assert main(["validate", "--suite", "nope", "--scenario", "smoke"]) == 2


def test_validate_roundtrip_reports_fraction(capsys):
    assert main(["validate", "--suite", "roundtrip", "--scenario", "fig8"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["metrics"]["fraction"] > 0


def test_validate_moments(capsys):
    assert main(["validate", "--suite", "moments", "--scenario", "fig10", "--paths", "400"]) == 0


def test_reproduce_paths_figure(tmp_path):
    out = tmp_path / "fig1"
    assert main(["reproduce", "fig1", "--out", str(out)]) == 0
    with open(out / "fig1_paths.csv") as fh:
        header = next(csv.reader(fh))
    assert {"s_b", "mid", "ask"} <= set(header)
    manifest = json.loads((out / "manifest.json").read_text())
    assert [s["name"] for s in manifest["scenarios"]] == ["fig1"]


def test_reproduce_surfaces_figure(tmp_path):
    out = tmp_path / "fig8"
    assert main(["reproduce", "fig8", "--out", str(out)]) == 0
    surfaces = sorted(p.name for p in out.glob("fig8_*_t*.csv"))
    assert len(surfaces) == 8
    assert all(re.fullmatch(r"fig8_(lit|dark)_t[0-9p]+\.csv", n) for n in surfaces)


def test_reproduce_group_and_unknown(tmp_path, capsys):
    out = tmp_path / "fig11"
    assert main(["reproduce", "fig11", "--out", str(out)]) == 0
    names = {p.name for p in out.iterdir()}
    assert {"fig11_left_lit.csv", "fig11_right_dark.csv"} <= names
    assert main(["reproduce", "fig99", "--out", str(tmp_path / "x")]) == 2
    assert "fig99" in capsys.readouterr().err
