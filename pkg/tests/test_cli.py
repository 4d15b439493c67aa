import csv
import json
from importlib import resources

import pytest

from scenarios import curved_obstacle
from sweepctl.cli import main
from sweepctl.scenario_io import emit_scenario, scenario_document

EXAMPLE = str(resources.files("sweepctl") / "data" / "example1.json")


def _run(tmp_path, *argv, name="out"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


def test_simulate(tmp_path, capsys):
    code, out = _run(tmp_path, "simulate", EXAMPLE, "--epsilon", "1e-3", "--control=-1,-1")
    assert code == 0
    assert {p.name for p in out.iterdir()} == {
        "trajectory_regularized.csv",
        "trajectory_catching_up.csv",
        "penetration.json",
    }
    rep = json.loads((out / "penetration.json").read_text())
    assert rep["passed"] and rep["max_distance"] <= 1e-3 * 2**0.5
    assert capsys.readouterr().out.startswith("PASS")


def test_optimize(tmp_path):
    code, out = _run(tmp_path, "optimize", EXAMPLE, "--epsilon", "1e-2", "--control=-1,-1")
    assert code == 0
    rep = json.loads((out / "solve_report.json").read_text())
    assert rep["converged"]
    assert abs(sum(rep["terminal_state"]) + 1.0) <= 5e-2
    header = next(csv.reader((out / "adjoint.csv").open()))
    assert header[0] == "t"


def test_verify(tmp_path, capsys):
    code, out = _run(tmp_path, "verify", EXAMPLE, "--eps-schedule", "1e-2,1e-3,1e-4", "--control=-1,-1")
    assert code == 0
    rep = json.loads((out / "pmp_report.json").read_text())
    assert rep["passed"] and rep["pointing"]["verdict"] == "M1"
    assert len(json.loads((out / "measure_atoms.json").read_text())) == 102
    assert "FAIL" not in capsys.readouterr().out


def test_verify_full_pointing_fails_threshold(tmp_path, capsys):
    code, out = _run(tmp_path, "verify", EXAMPLE, "--eps-schedule", "1e-2,1e-3", "--pointing-mode", "full")
    assert code == 3
    assert "FAIL  pointing" in capsys.readouterr().out
    assert json.loads((out / "pmp_report.json").read_text())["passed"] is False


def test_sweep(tmp_path):
    code, out = _run(tmp_path, "sweep", EXAMPLE, "--eps-schedule", "1e-2,1e-3", "--control=-1,-1")
    assert code == 0
    rows = list(csv.reader((out / "continuation.csv").open()))
    assert rows[0][0] == "epsilon" and len(rows) == 3


def test_outputs_are_byte_identical(tmp_path):
    argv = ("verify", EXAMPLE, "--eps-schedule", "1e-2,1e-3", "--control=-1,-1")
    _, a = _run(tmp_path, *argv, name="a")
    _, b = _run(tmp_path, *argv, name="b")
    for name in ("adjoint.csv", "measure_atoms.json", "pmp_report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.parametrize(
    "text",
    ['{"x0": [0, 1],,}', '{"x0": [0, 1]}'],
    ids=["bad-json", "schema"],
)
def test_invalid_input_exits_1(tmp_path, capsys, text):
    path = tmp_path / "s.json"
    path.write_text(text)
    code, _ = _run(tmp_path, "simulate", str(path))
    assert code == 1
    assert "invalid input" in capsys.readouterr().err


def test_missing_file_and_bad_args(tmp_path):
    assert _run(tmp_path, "simulate", str(tmp_path / "nope.json"))[0] == 1
    assert _run(tmp_path, "launch", EXAMPLE)[0] == 1
    assert _run(tmp_path, "simulate", EXAMPLE, "--control=5,5")[0] == 1
    assert _run(tmp_path, "verify", EXAMPLE, "--eps-schedule", "1e-3,1e-2")[0] == 1


def test_numerical_failure_exits_2(tmp_path, capsys):
    doc = scenario_document(curved_obstacle())
    doc["x0"] = [1.05, 0.0]
    path = tmp_path / "curved.json"
    path.write_text(json.dumps(doc))
    code, _ = _run(tmp_path, "simulate", str(path), "--epsilon", "1", "--control=-1,0")
    assert code == 2
    assert "OutOfProxBand" in capsys.readouterr().err


def test_emitted_scenario_is_accepted(tmp_path):
    path = tmp_path / "curved.json"
    path.write_text(emit_scenario(curved_obstacle()))
    code, _ = _run(tmp_path, "simulate", str(path), "--epsilon", "1e-2", "--control=-1,0")
    assert code == 0
