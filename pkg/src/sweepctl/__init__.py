"""Optimal control of sweeping processes through Moreau-Yosida penalisation."""

from .adjoint import AdjointPath, extract_multipliers, integrate_adjoint, limit_study
from .dynamics import Trajectory, detect_crossings, integrate_catching_up, integrate_regularized
from .geometry import Ball, BallComplement, BoundaryStructure, HalfSpace, LinearMotion, Sublevel
from .model import ControlSet, ControlSignal, Scenario, ScenarioError, argmax_linear, project_onto_U
from .optimizer import SolveOptions, continuation, solve_penalized
from .pmp import check_pointing, verify_theorem, verify_weak_equation
from .scenario_io import bundled_example, emit_scenario, load_scenario, parse_scenario

__all__ = [
    "AdjointPath",
    "Ball",
    "BallComplement",
    "BoundaryStructure",
    "ControlSet",
    "ControlSignal",
    "HalfSpace",
    "LinearMotion",
    "Scenario",
    "ScenarioError",
    "SolveOptions",
    "Sublevel",
    "Trajectory",
    "argmax_linear",
    "bundled_example",
    "check_pointing",
    "continuation",
    "detect_crossings",
    "emit_scenario",
    "extract_multipliers",
    "integrate_adjoint",
    "integrate_catching_up",
    "integrate_regularized",
    "limit_study",
    "load_scenario",
    "parse_scenario",
    "project_onto_U",
    "solve_penalized",
    "verify_theorem",
    "verify_weak_equation",
]
