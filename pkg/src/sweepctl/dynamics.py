"""Forward integration of the penalised and of the exact sweeping dynamics.

The penalised equation

    x' = -(x - proj_C(t)(x)) / eps + f(x, u)

is stiff in its normal part.  Each step of :func:`integrate_regularized` is a
symmetric splitting: half a drift step under ``f`` (Heun), the exact flow of
the penalty term over the full step, and another half drift step.  For a
point outside a prox-regular set the penalty flow slides along the normal
segment towards the projection, which stays fixed, so

    Phi_h(b) = proj(b) + exp(-h/eps) * (b - proj(b))

exactly.  Inside the set it is the identity.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BoundaryStructure
from .model import ControlSignal, Scenario, ScenarioError

BISECTION_MAX_ITER = 60
BISECTION_TIME_TOL = 1e-6
EXACT_BAND = 1e-6


@dataclass
class Trajectory:
    """States on the integrator grid with distance diagnostics.

    ``stages`` holds the intermediate points of each step (``pre``: after
    the first half drift, ``post``: after the penalty flow) and the signed
    distance of ``pre`` that selected the penalty branch; the adjoint pass
    reuses them so both passes take identical branch decisions.
    """

    times: np.ndarray
    states: np.ndarray
    velocities: np.ndarray
    distance: np.ndarray
    signed: np.ndarray
    epsilon: float | None
    steps_per_interval: int
    stages: dict = field(default_factory=dict, repr=False)

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def state_at(self, t: float) -> np.ndarray:
        """Linear interpolation of the states."""
        k = min(max(int(t / self.step), 0), self.steps - 1)
        w = (t - self.times[k]) / self.step
        return (1.0 - w) * self.states[k] + w * self.states[k + 1]

    def to_csv(self, path) -> None:
        write_trajectory_csv(self, path)


def _drift(dyn, x, u, tau):
    if dyn.state_independent:
        return x + tau * dyn.f(x, u)
    k1 = dyn.f(x, u)
    k2 = dyn.f(x + tau * k1, u)
    return x + 0.5 * tau * (k1 + k2)


def _grid(scenario: Scenario, u: ControlSignal, steps_per_interval: int) -> tuple[np.ndarray, float]:
    if not math.isclose(u.horizon, scenario.horizon, rel_tol=1e-12):
        raise ScenarioError(f"control horizon {u.horizon} differs from scenario horizon {scenario.horizon}")
    if u.values.shape[1] != scenario.control_set.dim:
        raise ScenarioError("control dimension does not match the control set")
    if steps_per_interval < 1:
        raise ScenarioError("steps_per_interval must be at least 1")
    steps = u.intervals * steps_per_interval
    return np.linspace(0.0, scenario.horizon, steps + 1), scenario.horizon / steps


def _finish(scenario, times, states, epsilon, spi, stages) -> Trajectory:
    signed = np.asarray(scenario.set.signed_distance_along(times, states), dtype=float)
    velocities = np.empty_like(states)
    h = times[1] - times[0]
    velocities[:-1] = np.diff(states, axis=0) / h
    velocities[-1] = velocities[-2]
    return Trajectory(times, states, velocities, np.maximum(signed, 0.0), signed, epsilon, spi, stages)


def integrate_regularized(
    scenario: Scenario, u: ControlSignal, epsilon: float, steps_per_interval: int | None = None
) -> Trajectory:
    """Integrate the penalised dynamics on the grid refining ``u``.

    ``steps_per_interval`` defaults to the scenario numerics (step ``eps/4``).
    Raises :class:`~sweepctl.geometry.OutOfProxBand` when a stage leaves the
    ``rho/2`` band, which signals a too coarse step or too large ``eps``.
    """
    if not epsilon > 0.0:
        raise ScenarioError(f"epsilon must be positive, got {epsilon}")
    spi = steps_per_interval or scenario.numerics.steps_for(epsilon, scenario.horizon)
    times, h = _grid(scenario, u, spi)
    dyn = scenario.dynamics
    cset = scenario.set
    decay = math.exp(-h / epsilon)
    steps = len(times) - 1
    n = scenario.dim
    states = np.empty((steps + 1, n))
    pre = np.empty((steps, n))
    post = np.empty((steps, n))
    pre_signed = np.empty(steps)
    states[0] = scenario.x0
    x = np.asarray(scenario.x0, dtype=float)
    values = u.values
    for k in range(steps):
        uk = values[k // spi]
        b = _drift(dyn, x, uk, 0.5 * h)
        t_mid = times[k] + 0.5 * h
        ds, foot = cset.penalty_foot(t_mid, b)
        if ds > 0.0:
            c = foot + decay * (b - foot)
        else:
            c = b
        x = _drift(dyn, c, uk, 0.5 * h)
        pre[k] = b
        post[k] = c
        pre_signed[k] = ds
        states[k + 1] = x
    stages = {"pre": pre, "post": post, "pre_signed": pre_signed, "decay": decay}
    return _finish(scenario, times, states, epsilon, spi, stages)


def integrate_catching_up(scenario: Scenario, u: ControlSignal, steps_per_interval: int) -> Trajectory:
    """Catching-up scheme ``x_{k+1} = proj_{C(t_{k+1})}(x_k + h f(x_k, u_k))``."""
    times, h = _grid(scenario, u, steps_per_interval)
    dyn = scenario.dynamics
    cset = scenario.set
    states = np.empty((len(times), scenario.dim))
    states[0] = scenario.x0
    x = np.asarray(scenario.x0, dtype=float)
    for k in range(len(times) - 1):
        uk = u.values[k // steps_per_interval]
        x = cset.project(times[k + 1], x + h * dyn.f(x, uk))
        states[k + 1] = x
    return _finish(scenario, times, states, None, steps_per_interval, {})


# diagnostics --------------------------------------------------------------------


def _bisect(fun, a: float, b: float, fa: float) -> float:
    """Root of ``fun`` on ``[a, b]`` given a sign change, to the time tolerance."""
    for _ in range(BISECTION_MAX_ITER):
        if b - a <= BISECTION_TIME_TOL:
            break
        m = 0.5 * (a + b)
        fm = fun(m)
        if (fm > 0.0) == (fa > 0.0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def contact_band(scenario: Scenario, traj: Trajectory) -> float:
    if traj.epsilon is None:
        return EXACT_BAND
    return max(2.0 * traj.epsilon * (scenario.beta + scenario.gamma), EXACT_BAND)


def detect_crossings(scenario: Scenario, traj: Trajectory, band: float | None = None) -> BoundaryStructure:
    """Boundary crossings and the contact/interior interval structure.

    Nodes with signed distance ``>= -band`` count as contact; interval end
    points and sign changes are refined by bisection along the linear
    interpolant of the states.
    """
    band = contact_band(scenario, traj) if band is None else band
    t = traj.times
    s = traj.signed
    T = scenario.horizon

    def level(shift):
        return lambda tau: float(scenario.set.signed_distance(tau, traj.state_at(tau))) + shift

    # nodes within the boundary tolerance count as zero; a crossing is a sign
    # change between consecutive nonzero nodes, located on the zero run if any
    sign = np.where(np.abs(s) <= scenario.set.boundary_tol, 0, np.sign(s))
    crossings = []
    nonzero = np.flatnonzero(sign)
    for k, j in zip(nonzero[:-1], nonzero[1:]):
        if sign[k] == sign[j]:
            continue
        if j == k + 1:
            crossings.append(_bisect(level(0.0), t[k], t[j], s[k]))
        else:
            crossings.append(float(t[k + 1]))

    mask = s >= -band
    intervals = []
    k = 0
    steps = len(t) - 1
    while k <= steps:
        if not mask[k]:
            k += 1
            continue
        j = k
        while j + 1 <= steps and mask[j + 1]:
            j += 1
        start = t[k] if k == 0 else _bisect(level(band), t[k - 1], t[k], s[k - 1] + band)
        end = t[j] if j == steps else _bisect(level(band), t[j], t[j + 1], s[j] + band)
        intervals.append((float(start), float(end)))
        k = j + 1

    interior = []
    edge = 0.0
    for a, b in intervals:
        if a > edge:
            interior.append((edge, a))
        edge = b
    if edge < T:
        interior.append((edge, T))

    t_bar = None
    if intervals:
        first = intervals[0]
        inside = [c for c in crossings if first[0] - BISECTION_TIME_TOL <= c <= first[1] + BISECTION_TIME_TOL]
        t_bar = inside[0] if inside else first[0]
    return BoundaryStructure(crossings, intervals, interior, t_bar, T)


@dataclass(frozen=True)
class PenetrationReport:
    max_ratio: float
    max_distance: float
    layer_depth: float
    bound: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.tolerance


def penetration_report(traj: Trajectory, epsilon: float, beta: float, gamma: float) -> PenetrationReport:
    """Compare ``d(x(t))`` with ``eps (beta + gamma) (1 - exp(-t/eps))``."""
    bound = epsilon * (beta + gamma) * -np.expm1(-traj.times / epsilon)
    d = traj.distance
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0.0, d / bound, np.where(d > 0.0, np.inf, 0.0))
    return PenetrationReport(
        max_ratio=float(np.max(ratio)),
        max_distance=float(np.max(d)),
        layer_depth=float(d[-1]),
        bound=epsilon * (beta + gamma),
        tolerance=1.0 + 10.0 * traj.step / epsilon,
    )


def velocity_bound_holds(traj: Trajectory, beta: float, gamma: float, tol: float = 1e-9) -> bool:
    """``|x'| <= gamma + 2 beta`` for penalised runs, ``gamma + beta`` for exact ones."""
    limit = gamma + (2.0 * beta if traj.epsilon is not None else beta)
    return bool(np.max(np.linalg.norm(traj.velocities, axis=1)) <= limit + tol)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    n = traj.states.shape[1]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *[f"x_{i + 1}" for i in range(n)], "d", "d_signed"])
        for t, x, d, s in zip(traj.times, traj.states, traj.distance, traj.signed):
            writer.writerow([_fmt(t), *[_fmt(v) for v in x], _fmt(d), _fmt(s)])


def _fmt(v: float) -> str:
    return format(float(v), ".17g")
