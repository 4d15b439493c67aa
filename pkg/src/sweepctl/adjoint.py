"""Backward adjoint pass and the multiplier objects extracted from it.

:func:`integrate_adjoint` propagates ``lambda = -p`` through the transpose of
the linearised forward step, so that the control sensitivities it
accumulates are the exact gradient of the discrete cost.  The Jacobian of
the penalty flow at a point outside the set is

    I - (1 - exp(-h/eps)) * (d Hess(d) + n n^T),

whose normal block, ``exp(-h/eps)``, is the decay of the stiff normal mode.
At interior points the normal terms are switched off.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Trajectory, detect_crossings, integrate_regularized
from .model import ControlSignal, Scenario, ScenarioError

JUMP_RADIUS_FACTOR = 20.0
JUMP_TOL = 0.1
ENDPOINT_FRACTION = 0.01


@dataclass
class Jump:
    time: float
    left: np.ndarray
    right: np.ndarray

    @property
    def size(self) -> np.ndarray:
        return self.left - self.right


@dataclass
class AdjointPath:
    """Adjoint samples on the integrator grid of a penalised run.

    ``p`` holds the adjoint, ``xi = <p, grad d>``, ``eta = d / eps`` and
    ``p_normal = <p, n>`` with ``n`` the external normal at the nearest
    boundary point.  ``control_sensitivity[k]`` is the derivative of the
    terminal cost with respect to the control value used on step ``k``.
    """

    times: np.ndarray
    p: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    p_normal: np.ndarray
    normals: np.ndarray
    distance_gradients: np.ndarray
    epsilon: float
    control_sensitivity: np.ndarray
    measure_atoms: list = field(default_factory=list)
    jumps: list = field(default_factory=list)

    @property
    def step(self) -> float:
        return float(self.times[1] - self.times[0])

    def density(self) -> np.ndarray:
        """Vector density ``xi grad d / eps`` of the normal measure term."""
        return self.xi[:, None] * self.distance_gradients / self.epsilon

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.p, axis=1)))

    def total_variation(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.p, axis=0), axis=1)))

    def xi_mass(self) -> float:
        return float(np.sum(_trapezoid_weights(self.times) * np.abs(self.xi)) / self.epsilon)

    def to_csv(self, path) -> None:
        import csv

        n = self.p.shape[1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", *[f"p_{i + 1}" for i in range(n)], "xi", "eta", "p_normal"])
            for t, p, xi, eta, pn in zip(self.times, self.p, self.xi, self.eta, self.p_normal):
                writer.writerow([_fmt(t), *[_fmt(v) for v in p], _fmt(xi), _fmt(eta), _fmt(pn)])

    def atoms_json(self) -> str:
        return json.dumps([atom.as_dict() for atom in self.measure_atoms], indent=2)


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    w = np.zeros_like(times)
    dt = np.diff(times)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def _heun_jacobians(dyn, x, u, tau):
    """Jacobians of one Heun step ``x -> x + tau/2 (f(x) + f(x + tau f(x)))``."""
    n = x.size
    eye = np.eye(n)
    G1 = dyn.f_u(x, u)
    if dyn.state_independent:
        return eye, tau * G1
    F1 = dyn.f_x(x, u)
    xe = x + tau * dyn.f(x, u)
    F2 = dyn.f_x(xe, u)
    G2 = dyn.f_u(xe, u)
    jx = eye + 0.5 * tau * (F1 + F2 @ (eye + tau * F1))
    ju = 0.5 * tau * (G1 + G2 + tau * F2 @ G1)
    return jx, ju


def integrate_adjoint(scenario: Scenario, traj: Trajectory, u: ControlSignal, epsilon: float) -> AdjointPath:
    """Backward pass from ``-p(T) = grad h(x(T))`` on the grid of ``traj``.

    ``traj`` must come from :func:`~sweepctl.dynamics.integrate_regularized`
    with the same ``u`` and ``epsilon``; the branch of every step is read
    from the stored forward stages.
    """
    if traj.epsilon is None or "pre" not in traj.stages:
        raise ScenarioError("the adjoint pass needs a penalised trajectory")
    if not np.isclose(traj.epsilon, epsilon, rtol=1e-12, atol=0.0):
        raise ScenarioError(f"trajectory was computed with eps={traj.epsilon}, not {epsilon}")
    spi = traj.steps_per_interval
    if traj.steps != u.intervals * spi:
        raise ScenarioError("trajectory grid does not refine the control grid")

    cset = scenario.set
    dyn = scenario.dynamics
    times = traj.times
    h = traj.step
    steps = traj.steps
    n = scenario.dim
    decay = traj.stages["decay"]
    pre = traj.stages["pre"]
    post = traj.stages["post"]
    active = traj.stages["pre_signed"] >= -cset.boundary_tol

    # penalty-flow Jacobians, only where the normal terms are switched on
    penalty = np.broadcast_to(np.eye(n), (steps, n, n)).copy()
    idx = np.flatnonzero(active)
    if idx.size:
        ds, normal, hess = cset.geometry_along(times[idx] + 0.5 * h, pre[idx])
        grad_P = np.maximum(ds, 0.0)[:, None, None] * hess + normal[:, :, None] * normal[:, None, :]
        penalty[idx] -= (1.0 - decay) * grad_P

    lam = np.empty((steps + 1, n))
    sens = np.empty((steps, u.values.shape[1]))
    nu = scenario.cost.gradient(traj.states[-1])
    lam[-1] = nu
    if dyn.constant_jacobians:
        jx1, ju1 = jx2, ju2 = _heun_jacobians(dyn, traj.states[0], u.values[0], 0.5 * h)
    for k in range(steps - 1, -1, -1):
        uk = u.values[k // spi]
        if not dyn.constant_jacobians:
            jx2, ju2 = _heun_jacobians(dyn, post[k], uk, 0.5 * h)
            jx1, ju1 = _heun_jacobians(dyn, traj.states[k], uk, 0.5 * h)
        g = ju2.T @ nu
        nu = jx2.T @ nu
        if active[k]:
            nu = penalty[k] @ nu
        sens[k] = g + ju1.T @ nu
        nu = jx1.T @ nu
        lam[k] = nu

    p = -lam
    ds_nodes, normals, _ = cset.geometry_along(times, traj.states)
    # a node counts as in contact only if an adjacent step took the penalty branch
    touched = np.zeros(steps + 1, dtype=bool)
    touched[:-1] |= active
    touched[1:] |= active
    on = (ds_nodes >= -cset.boundary_tol) & touched
    grad_d = np.where(on[:, None], normals, 0.0)
    xi = np.einsum("ij,ij->i", p, grad_d)
    eta = np.maximum(ds_nodes, 0.0) / epsilon
    p_normal = np.einsum("ij,ij->i", p, normals)
    path = AdjointPath(times, p, xi, eta, p_normal, normals, grad_d, epsilon, sens)
    path.measure_atoms = bin_measure(path, default_windows(scenario.horizon))
    path.jumps = find_jumps(path)
    return path


# measure binning ------------------------------------------------------------------


@dataclass
class MeasureAtom:
    window: tuple[float, float]
    mass: np.ndarray
    centroid: float

    def as_dict(self) -> dict:
        return {"window": [float(self.window[0]), float(self.window[1])], "mass": [float(m) for m in self.mass]}


def default_windows(horizon: float, interior: int = 100, fraction: float = ENDPOINT_FRACTION) -> np.ndarray:
    """Edges of the binning windows: ``[0, w]``, ``interior`` uniform windows
    covering ``[w, T - w]``, and ``[T - w, T]`` with ``w = fraction * T``."""
    w = fraction * horizon
    return np.concatenate([[0.0], np.linspace(w, horizon - w, interior + 1), [horizon]])


def bin_measure(path: AdjointPath, edges: np.ndarray) -> list[MeasureAtom]:
    """Integrate the vector density over each window (trapezoid rule per
    grid segment, a segment belongs to the window holding its midpoint)."""
    dens = path.density()
    t = path.times
    seg_mass = 0.5 * np.diff(t)[:, None] * (dens[:-1] + dens[1:])
    seg_mid = 0.5 * (t[:-1] + t[1:])
    which = np.clip(np.searchsorted(edges, seg_mid, side="right") - 1, 0, len(edges) - 2)
    atoms = []
    for i in range(len(edges) - 1):
        sel = which == i
        mass = seg_mass[sel].sum(axis=0) if np.any(sel) else np.zeros(dens.shape[1])
        weights = np.linalg.norm(seg_mass[sel], axis=1)
        if weights.sum() > 0.0:
            centroid = float(weights @ seg_mid[sel] / weights.sum())
        else:
            centroid = 0.5 * (edges[i] + edges[i + 1])
        atoms.append(MeasureAtom((float(edges[i]), float(edges[i + 1])), mass, centroid))
    return atoms


@dataclass
class MultiplierReport:
    eta_profile: tuple[np.ndarray, np.ndarray]
    xi_mass_total: float
    atom_masses: list[MeasureAtom]
    eta_max: float

    def mass_in(self, a: float, b: float) -> np.ndarray:
        total = np.zeros_like(self.atom_masses[0].mass)
        for atom in self.atom_masses:
            if atom.window[0] >= a - 1e-12 and atom.window[1] <= b + 1e-12:
                total = total + atom.mass
        return total


def extract_multipliers(path: AdjointPath, traj: Trajectory, epsilon: float, edges=None) -> MultiplierReport:
    if not np.isclose(path.epsilon, epsilon) or len(traj.times) != len(path.times):
        raise ScenarioError("adjoint path and trajectory do not belong to the same run")
    horizon = float(traj.times[-1])
    atoms = bin_measure(path, default_windows(horizon) if edges is None else np.asarray(edges, dtype=float))
    return MultiplierReport((path.times, path.eta), path.xi_mass(), atoms, float(np.max(path.eta)))


# jumps ------------------------------------------------------------------------------


def local_variation(times: np.ndarray, p: np.ndarray, center: float, radius: float) -> float:
    """Variation of ``p`` over the grid segments inside ``[center - r, center + r]``."""
    lo = np.searchsorted(times, center - radius, side="left")
    hi = np.searchsorted(times, center + radius, side="right")
    if hi - lo < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(p[lo:hi], axis=0), axis=1)))


def find_jumps(path: AdjointPath, tol: float = JUMP_TOL, radius_factor: float = JUMP_RADIUS_FACTOR) -> list[Jump]:
    """Locations where the variation of ``p`` concentrates in ``radius_factor * eps``.

    At a limit jump the variation over such a neighbourhood stays of the
    size of the jump as ``eps`` shrinks; elsewhere it scales with ``eps``.
    """
    t = path.times
    p = path.p
    r = radius_factor * path.epsilon
    increments = np.linalg.norm(np.diff(p, axis=0), axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(increments)])
    lo = np.searchsorted(t, t - r, side="left")
    hi = np.searchsorted(t, t + r, side="right") - 1
    local = cumulative[hi] - cumulative[lo]
    flagged = np.flatnonzero(local >= tol)
    jumps = []
    start = 0
    while start < flagged.size:
        stop = start
        while stop + 1 < flagged.size and flagged[stop + 1] == flagged[stop] + 1:
            stop += 1
        region = np.arange(flagged[start], flagged[stop] + 1)
        seg = region[:-1] if region.size > 1 else region
        seg = seg[seg < increments.size]
        k = int(seg[np.argmax(increments[seg])]) if seg.size else int(region[0])
        t_jump = 0.5 * (t[k] + t[min(k + 1, t.size - 1)])
        if t[-1] - t_jump <= r:
            t_jump = float(t[-1])
        elif t_jump - t[0] <= r:
            t_jump = float(t[0])
        left_idx = max(int(np.searchsorted(t, t_jump - r, side="left")), 0)
        right_idx = min(int(np.searchsorted(t, t_jump + r, side="right")) - 1, t.size - 1)
        jumps.append(Jump(float(t_jump), p[left_idx].copy(), p[right_idx].copy()))
        start = stop + 1
    return jumps


def jump_alignment(jump: Jump, normal: np.ndarray) -> float:
    """Sine of the angle between the jump ``p(t-) - p(t+)`` and the normal line."""
    v = jump.size
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return 0.0
    nhat = normal / np.linalg.norm(normal)
    return float(np.linalg.norm(v - (v @ nhat) * nhat) / norm)


# limit study --------------------------------------------------------------------------


@dataclass
class LimitMember:
    epsilon: float
    trajectory: Trajectory
    path: AdjointPath
    sup_norm: float
    variation: float
    xi_mass: float


@dataclass
class LimitStudy:
    members: list[LimitMember]
    jump_table: list[Jump]
    normal_component_sup: float
    tbar_variation: list[float]
    t_bar: float | None

    @property
    def p_curves(self) -> list[tuple[float, np.ndarray, np.ndarray]]:
        return [(m.epsilon, m.path.times, m.path.p) for m in self.members]

    @property
    def limit(self) -> AdjointPath:
        return self.members[-1].path

    @property
    def finest(self) -> LimitMember:
        return self.members[-1]


def normal_component_sup(path: AdjointPath, structure, horizon: float, margin: float | None = None) -> float:
    """``sup |p^N|`` over contact intervals, trimmed by ``margin`` at both ends
    and kept away from the endpoint windows of ``[0, T]``."""
    margin = ENDPOINT_FRACTION * horizon if margin is None else margin
    t = path.times
    mask = np.zeros(t.size, dtype=bool)
    for a, b in structure.i_boundary:
        mask |= (t >= a + margin) & (t <= b - margin)
    mask &= (t >= margin) & (t <= horizon - margin)
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(path.p_normal[mask])))


def limit_study(
    scenario: Scenario,
    u: ControlSignal,
    eps_schedule,
    steps_per_interval=None,
) -> LimitStudy:
    """Adjoint paths along a decreasing schedule of ``eps``.

    The finest path is the estimate of the limit adjoint.  A jump of the
    finest path is kept only if the variation near it does not decay along
    the schedule.
    """
    schedule = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ScenarioError("eps schedule must be strictly decreasing")
    members = []
    for eps in schedule:
        spi = steps_per_interval(eps) if callable(steps_per_interval) else steps_per_interval
        traj = integrate_regularized(scenario, u, eps, spi)
        path = integrate_adjoint(scenario, traj, u, eps)
        members.append(LimitMember(eps, traj, path, path.sup_norm(), path.total_variation(), path.xi_mass()))

    finest = members[-1]
    jumps = []
    for jump in finest.path.jumps:
        sizes = [
            local_variation(m.path.times, m.path.p, jump.time, JUMP_RADIUS_FACTOR * m.epsilon) for m in members
        ]
        if sizes[-1] >= 0.5 * max(sizes):
            jumps.append(jump)

    structure = detect_crossings(scenario, finest.trajectory)
    n_sup = normal_component_sup(finest.path, structure, scenario.horizon)
    tbar_var = []
    if structure.t_bar is not None:
        for m in members:
            tbar_var.append(local_variation(m.path.times, m.path.p, structure.t_bar, JUMP_RADIUS_FACTOR * m.epsilon))
    return LimitStudy(members, jumps, n_sup, tbar_var, structure.t_bar)


def linf_bound(scenario: Scenario, traj: Trajectory, curvature: float = 0.0) -> float:
    """``|grad h(x(T))| exp((c (gamma + beta) + k) T)`` bounding ``sup |p|``."""
    g = np.linalg.norm(scenario.cost.gradient(traj.final_state))
    c = scenario.constants
    return float(g * np.exp((curvature * (c.gamma + c.beta) + c.k) * scenario.horizon))
