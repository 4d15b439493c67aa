"""Projected-gradient solution of the penalised problem and eps-continuation.

For a reference control ``u_ref`` the penalised problem minimises

    J(u) = h(x_eps(T)) + 1/2 int |u - u_ref|^2 dt

over piecewise-constant controls with values in the box ``U``.  Gradients
come from the discrete adjoint, so they are exact for the discrete cost.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointPath, integrate_adjoint
from .dynamics import Trajectory, integrate_catching_up, integrate_regularized
from .model import ControlSignal, Scenario, ScenarioError, argmax_linear, project_onto_U

log = logging.getLogger(__name__)

ARMIJO = 1e-4
BACKTRACK = 0.5
MAX_HALVINGS = 30


class NonDecreasingCost(RuntimeError):
    """Line search failed to decrease the cost; the gradient is suspect."""


@dataclass
class SolveOptions:
    max_iters: int = 200
    step0: float = 1.0
    tol: float = 1e-6
    steps_per_interval: int | None = None


@dataclass
class SolveReport:
    u_opt: ControlSignal
    traj: Trajectory
    adjoint: AdjointPath
    cost_history: list[float]
    pmp_residual: float
    iterations: int
    converged: bool
    stationarity: float
    epsilon: float

    @property
    def cost(self) -> float:
        return self.cost_history[-1]

    def as_dict(self, trajectory_csv: str | None = None, adjoint_csv: str | None = None) -> dict:
        return {
            "epsilon": self.epsilon,
            "converged": self.converged,
            "iterations": self.iterations,
            "cost_history": [float(c) for c in self.cost_history],
            "stationarity": self.stationarity,
            "pmp_residual": self.pmp_residual,
            "terminal_state": [float(v) for v in self.traj.final_state],
            "u_opt": self.u_opt.values.tolist(),
            "trajectory_csv": trajectory_csv,
            "adjoint_csv": adjoint_csv,
        }

    def to_json(self, **refs) -> str:
        return json.dumps(self.as_dict(**refs), indent=2, sort_keys=True)


def _check_grids(u: ControlSignal, u_ref: ControlSignal) -> None:
    if u.values.shape != u_ref.values.shape:
        raise ScenarioError(f"control grids differ: {u.values.shape} vs reference {u_ref.values.shape}")


def penalty_term(u: ControlSignal, u_ref: ControlSignal) -> float:
    _check_grids(u, u_ref)
    return 0.5 * u.dt * float(np.sum((u.values - u_ref.values) ** 2))


def discrete_cost(scenario: Scenario, u: ControlSignal, u_ref: ControlSignal, epsilon: float, steps_per_interval=None) -> float:
    """Cost of ``u`` evaluated by a forward run only."""
    traj = integrate_regularized(scenario, u, epsilon, steps_per_interval)
    return scenario.cost.value(traj.final_state) + penalty_term(u, u_ref)


def cost_gradient(
    scenario: Scenario, traj: Trajectory, path: AdjointPath, u: ControlSignal, u_ref: ControlSignal
) -> np.ndarray:
    """Derivative of the discrete cost with respect to each interval value.

    Row ``k`` is ``int_{I_k} (-f_u^T p + u_k - u_ref) dt`` in its discrete
    form: the adjoint sensitivities of the steps inside interval ``k`` plus
    the penalty derivative.
    """
    _check_grids(u, u_ref)
    spi = traj.steps_per_interval
    sens = path.control_sensitivity
    if sens.shape[0] != u.intervals * spi:
        raise ScenarioError("adjoint path does not match the control grid")
    per_interval = sens.reshape(u.intervals, spi, -1).sum(axis=1)
    return per_interval + u.dt * (u.values - u_ref.values)


def stationarity(scenario: Scenario, u: ControlSignal, grad: np.ndarray) -> float:
    """L2 norm of ``u - proj_U(u - G)`` with ``G`` the L2 gradient."""
    G = grad / u.dt
    step = u.values - project_onto_U(scenario.control_set, u.values - G)
    return float(np.sqrt(u.dt * np.sum(step**2)))


def pmp_residual(scenario: Scenario, u: ControlSignal, grad: np.ndarray) -> float:
    """Largest gap in the per-interval maximality condition of the penalised problem."""
    c = -grad / u.dt
    best = argmax_linear(scenario.control_set, c).value
    return float(max(0.0, np.max(np.sum(c * (best - u.values), axis=1))))


def _evaluate(scenario, u, u_ref, epsilon, spi):
    traj = integrate_regularized(scenario, u, epsilon, spi)
    path = integrate_adjoint(scenario, traj, u, epsilon)
    cost = scenario.cost.value(traj.final_state) + penalty_term(u, u_ref)
    return traj, path, cost, cost_gradient(scenario, traj, path, u, u_ref)


def solve_penalized(
    scenario: Scenario,
    u_ref: ControlSignal,
    epsilon: float,
    opts: SolveOptions | None = None,
    initial: ControlSignal | None = None,
) -> SolveReport:
    """Projected gradient with Armijo backtracking, started from ``u_ref``
    unless ``initial`` is given."""
    opts = opts or SolveOptions()
    U = scenario.control_set
    if not u_ref.admissible(U):
        raise ScenarioError("reference control is not admissible")
    u = initial if initial is not None else u_ref
    u = u.with_values(project_onto_U(U, u.values))
    spi = opts.steps_per_interval
    traj, path, cost, grad = _evaluate(scenario, u, u_ref, epsilon, spi)
    history = [cost]
    stat = stationarity(scenario, u, grad)
    iterations = 0
    while stat > opts.tol and iterations < opts.max_iters:
        G = grad / u.dt
        s = opts.step0
        for _ in range(MAX_HALVINGS):
            trial = u.with_values(project_onto_U(U, u.values - s * G))
            t_traj, t_path, t_cost, t_grad = _evaluate(scenario, trial, u_ref, epsilon, spi)
            if t_cost <= cost + ARMIJO * float(np.sum(grad * (trial.values - u.values))):
                break
            s *= BACKTRACK
        else:
            raise NonDecreasingCost(
                f"no decrease after {MAX_HALVINGS} halvings at iteration {iterations} (cost {cost:.12g})"
            )
        if np.array_equal(trial.values, u.values):
            log.debug("eps=%g: step underflow at stationarity %.3e", epsilon, stat)
            break
        u, traj, path, cost, grad = trial, t_traj, t_path, t_cost, t_grad
        history.append(cost)
        stat = stationarity(scenario, u, grad)
        iterations += 1
        log.debug("eps=%g iter=%d cost=%.12g stationarity=%.3e", epsilon, iterations, cost, stat)
    return SolveReport(
        u_opt=u,
        traj=traj,
        adjoint=path,
        cost_history=history,
        pmp_residual=pmp_residual(scenario, u, grad),
        iterations=iterations,
        converged=stat <= opts.tol,
        stationarity=stat,
        epsilon=epsilon,
    )


@dataclass
class ContinuationRow:
    epsilon: float
    control_gap: float
    state_gap: float
    cost: float
    catching_up_cost: float
    iterations: int
    converged: bool

    @property
    def cost_gap(self) -> float:
        return self.cost - self.catching_up_cost


@dataclass
class ContinuationReport:
    solves: list[SolveReport]
    table: list[ContinuationRow] = field(default_factory=list)

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["epsilon", "control_gap_l2", "state_gap_sup", "cost", "catching_up_cost", "cost_gap", "iterations", "converged"]
            )
            for r in self.table:
                writer.writerow(
                    [
                        *(format(float(v), ".17g") for v in (r.epsilon, r.control_gap, r.state_gap, r.cost, r.catching_up_cost, r.cost_gap)),
                        r.iterations,
                        int(r.converged),
                    ]
                )


def continuation(
    scenario: Scenario, u_ref: ControlSignal, eps_schedule, opts: SolveOptions | None = None
) -> ContinuationReport:
    """Solve along a decreasing ``eps`` schedule, warm-starting each solve."""
    schedule = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ScenarioError("eps schedule must be strictly decreasing")
    opts = opts or SolveOptions()
    report = ContinuationReport([])
    warm = None
    for eps in schedule:
        sol = solve_penalized(scenario, u_ref, eps, opts, initial=warm)
        warm = sol.u_opt
        catch = integrate_catching_up(scenario, sol.u_opt, sol.traj.steps_per_interval)
        report.solves.append(sol)
        report.table.append(
            ContinuationRow(
                epsilon=eps,
                control_gap=sol.u_opt.l2_distance(u_ref),
                state_gap=float(np.max(np.linalg.norm(sol.traj.states - catch.states, axis=1))),
                cost=scenario.cost.value(sol.traj.final_state),
                catching_up_cost=scenario.cost.value(catch.final_state),
                iterations=sol.iterations,
                converged=sol.converged,
            )
        )
    return report
