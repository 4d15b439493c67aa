"""Command line entry point.

    sweepctl <simulate|optimize|verify|sweep> scenario.json [options]

Exit status: 0 success, 1 invalid input, 2 numerical failure, 3 a checked
threshold failed.  Artifacts go to ``--out``; summaries to standard output;
diagnostics to standard error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .adjoint import extract_multipliers, limit_study
from .dynamics import (
    detect_crossings,
    integrate_catching_up,
    integrate_regularized,
    penetration_report,
    velocity_bound_holds,
)
from .geometry import GeometryError
from .model import ControlSignal, Scenario, ScenarioError
from .optimizer import NonDecreasingCost, SolveOptions, continuation, solve_penalized
from .pmp import verify_theorem
from .scenario_io import load_scenario

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2
EXIT_FAILED = 3

log = logging.getLogger("sweepctl")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sweepctl", description="Penalised sweeping-process optimal control.")
    parser.add_argument("command", choices=["simulate", "optimize", "verify", "sweep"])
    parser.add_argument("scenario", help="scenario JSON file")
    parser.add_argument("--epsilon", type=float, help="penalty parameter (simulate, optimize)")
    parser.add_argument("--eps-schedule", type=_floats, help="decreasing epsilons, comma separated (verify, sweep)")
    parser.add_argument("--intervals", type=int, help="number of control intervals")
    parser.add_argument("--steps-per-interval", type=int, help="integrator steps per control interval")
    parser.add_argument("--control", type=_floats, help="constant reference control; defaults to the lower corner of U")
    parser.add_argument("--out", default=".", help="output directory (default: current directory)")
    parser.add_argument("--pointing-mode", choices=["full", "sigma_only"])
    parser.add_argument("--max-iters", type=int, default=SolveOptions.max_iters)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _write(path: Path, writer) -> None:
    """Write through a temporary file in the same directory, then rename."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_text(path: Path, text: str) -> None:
    _write(path, lambda tmp: Path(tmp).write_text(text, encoding="utf-8"))


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _configure(scenario: Scenario, args) -> Scenario:
    num = scenario.numerics
    changes = {}
    if args.intervals is not None:
        changes["control_intervals"] = args.intervals
    if args.steps_per_interval is not None:
        changes["steps_per_interval"] = args.steps_per_interval
    if args.pointing_mode is not None:
        changes["pointing_mode"] = args.pointing_mode
    if args.epsilon is not None:
        changes["epsilon"] = args.epsilon
    if args.eps_schedule is not None:
        changes["eps_schedule"] = tuple(args.eps_schedule)
    if changes.get("control_intervals", 1) < 1 or changes.get("steps_per_interval", 1) < 1:
        raise ScenarioError("--intervals and --steps-per-interval must be positive")
    return replace(scenario, numerics=replace(num, **changes)) if changes else scenario


def _reference(scenario: Scenario, args) -> ControlSignal:
    value = scenario.control_set.lo if args.control is None else np.asarray(args.control)
    if value.shape != scenario.control_set.lo.shape:
        raise ScenarioError(f"--control needs {scenario.control_set.dim} components")
    u = scenario.constant_control(value)
    if not u.admissible(scenario.control_set):
        raise ScenarioError("--control lies outside the control set")
    return u


def _epsilon(scenario: Scenario) -> float:
    num = scenario.numerics
    if num.epsilon is not None:
        return num.epsilon
    if num.eps_schedule:
        return num.eps_schedule[-1]
    raise ScenarioError("no epsilon: pass --epsilon or set numerics.epsilon")


def _schedule(scenario: Scenario) -> list[float]:
    num = scenario.numerics
    schedule = list(num.eps_schedule) or ([num.epsilon] if num.epsilon is not None else [])
    if not schedule:
        raise ScenarioError("no eps schedule: pass --eps-schedule or set numerics.eps_schedule")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ScenarioError("eps schedule must be strictly decreasing")
    return schedule


def _steps(scenario: Scenario, eps: float) -> int:
    return scenario.numerics.steps_for(eps, scenario.horizon)


def cmd_simulate(scenario: Scenario, args, out: Path) -> int:
    eps = _epsilon(scenario)
    u = _reference(scenario, args)
    spi = _steps(scenario, eps)
    reg = integrate_regularized(scenario, u, eps, spi)
    catch = integrate_catching_up(scenario, u, spi)
    _write(out / "trajectory_regularized.csv", reg.to_csv)
    _write(out / "trajectory_catching_up.csv", catch.to_csv)
    pen = penetration_report(reg, eps, scenario.beta, scenario.gamma)
    speed = velocity_bound_holds(reg, scenario.beta, scenario.gamma)
    report = {
        "epsilon": eps,
        "steps_per_interval": spi,
        "max_distance": pen.max_distance,
        "bound": pen.bound,
        "max_ratio": pen.max_ratio,
        "ratio_tolerance": pen.tolerance,
        "layer_depth": pen.layer_depth,
        "state_gap_sup": float(np.max(np.linalg.norm(reg.states - catch.states, axis=1))),
        "velocity_bound": speed,
        "passed": pen.passed and speed,
    }
    _write_text(out / "penetration.json", _dump(report))
    print(f"{'PASS' if pen.passed else 'FAIL'}  penetration  max d/bound = {pen.max_ratio:.4f} (tolerance {pen.tolerance:.4f})")
    print(f"{'PASS' if speed else 'FAIL'}  velocity_bound")
    return EXIT_OK if report["passed"] else EXIT_FAILED


def cmd_optimize(scenario: Scenario, args, out: Path) -> int:
    eps = _epsilon(scenario)
    u_ref = _reference(scenario, args)
    opts = SolveOptions(max_iters=args.max_iters, steps_per_interval=_steps(scenario, eps))
    sol = solve_penalized(scenario, u_ref, eps, opts)
    _write(out / "trajectory.csv", sol.traj.to_csv)
    _write(out / "adjoint.csv", sol.adjoint.to_csv)
    _write_text(out / "solve_report.json", sol.to_json(trajectory_csv="trajectory.csv", adjoint_csv="adjoint.csv") + "\n")
    print(
        f"{'PASS' if sol.converged else 'FAIL'}  converged  iterations={sol.iterations} "
        f"cost={sol.cost:.12g} stationarity={sol.stationarity:.3e}"
    )
    return EXIT_OK if sol.converged else EXIT_FAILED


def cmd_verify(scenario: Scenario, args, out: Path) -> int:
    schedule = _schedule(scenario)
    u = _reference(scenario, args)
    study = limit_study(scenario, u, schedule, lambda eps: _steps(scenario, eps))
    finest = study.finest
    structure = detect_crossings(scenario, finest.trajectory)
    multipliers = extract_multipliers(finest.path, finest.trajectory, finest.epsilon)
    report = verify_theorem(
        scenario,
        finest.trajectory,
        u,
        finest.path,
        structure,
        pointing_mode=scenario.numerics.pointing_mode,
        thresholds=scenario.numerics.thresholds,
        multipliers=multipliers,
        jumps=study.jump_table,
    )
    _write(out / "adjoint.csv", finest.path.to_csv)
    _write_text(out / "measure_atoms.json", _dump([a.as_dict() for a in multipliers.atom_masses]))
    _write_text(out / "pmp_report.json", report.to_json() + "\n")
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_FAILED


def cmd_sweep(scenario: Scenario, args, out: Path) -> int:
    schedule = _schedule(scenario)
    u_ref = _reference(scenario, args)
    opts = SolveOptions(max_iters=args.max_iters, steps_per_interval=scenario.numerics.steps_per_interval)
    report = continuation(scenario, u_ref, schedule, opts)
    _write(out / "continuation.csv", report.to_csv)
    for row in report.table:
        print(
            f"{'PASS' if row.converged else 'FAIL'}  eps={row.epsilon:.3g}  |u-u_ref|={row.control_gap:.3e}  "
            f"|x-x_catch|={row.state_gap:.3e}  cost_gap={row.cost_gap:.3e}"
        )
    return EXIT_OK if all(r.converged for r in report.table) else EXIT_FAILED


COMMANDS = {"simulate": cmd_simulate, "optimize": cmd_optimize, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    out = Path(args.out)
    try:
        scenario = _configure(load_scenario(args.scenario), args)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](scenario, args, out)
    except ScenarioError as exc:
        print(f"sweepctl: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (GeometryError, NonDecreasingCost, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"sweepctl: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"sweepctl: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
