"""Numerical verification of the necessary optimality conditions.

All checks run on the finest penalised run of a schedule, which stands in
for the limit objects.  Conditions holding almost everywhere are tested on
grid nodes outside the endpoint windows ``[0, w]`` and ``[T - w, T]``
(``w = 1% of T``), where atoms of the measure are allowed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .adjoint import (
    ENDPOINT_FRACTION,
    JUMP_RADIUS_FACTOR,
    AdjointPath,
    MultiplierReport,
    extract_multipliers,
    jump_alignment,
    local_variation,
    normal_component_sup,
)
from .dynamics import Trajectory, contact_band, detect_crossings
from .geometry import BoundaryStructure
from .model import ControlSignal, Scenario, argmax_linear

DEFAULT_THRESHOLDS = {
    "transversality": 1e-8,
    "maximality": 1e-6,
    "normal_component": 1e-3,
    "weak_equation": 1e-2,
    "jump_angle": 1e-6,
    "tbar_variation": 1e-3,
    "structure_time": 1e-3,
}

POINTING_SAMPLES = 100


@dataclass
class PointingReport:
    verdict: str
    margin: float
    threshold_mode: str
    min_rate: float
    max_rate: float
    threshold: float
    vacuous: bool = False
    full_mode_fails: bool = False


def _node_controls(u: ControlSignal, times: np.ndarray) -> np.ndarray:
    idx = np.minimum((times / u.dt + 1e-9).astype(int), u.intervals - 1)
    return u.values[idx]


def check_pointing(
    scenario: Scenario,
    traj: Trajectory,
    u: ControlSignal,
    mode: str = "sigma_only",
    structure: BoundaryStructure | None = None,
    seed: int = 0,
) -> PointingReport:
    """Classify the drift on the contact set as outward (M1), inward (M2) or neither.

    The rate ``L(t, v) = d_t d_S + <grad d_S, f(x(t), v)>`` is evaluated at the
    contact nodes for the vertices of ``U`` and ``POINTING_SAMPLES`` random
    controls.  ``mode="full"`` compares ``min L`` with ``gamma + beta + sigma``,
    ``mode="sigma_only"`` with ``sigma``; in both modes M2 means ``max L <= -sigma``.
    """
    if mode not in ("full", "sigma_only"):
        raise ValueError(f"unknown pointing mode {mode!r}")
    c = scenario.constants
    structure = structure or detect_crossings(scenario, traj)
    mask = np.zeros(traj.times.size, dtype=bool)
    for a, b in structure.i_boundary:
        mask |= (traj.times >= a) & (traj.times <= b)
    full_threshold = c.gamma + c.beta + c.sigma
    threshold = full_threshold if mode == "full" else c.sigma
    if not np.any(mask):
        return PointingReport("M1", float("inf"), mode, float("inf"), float("-inf"), threshold, vacuous=True)

    rng = np.random.default_rng(seed)
    controls = np.concatenate([scenario.control_set.vertices(), scenario.control_set.sample(rng, POINTING_SAMPLES)])
    times = traj.times[mask]
    states = traj.states[mask]
    cset = scenario.set
    rates = []
    for t, x in zip(times, states):
        dt_ds = float(cset.set_velocity(t, x))
        n = cset.normal(t, x)
        drift = np.array([scenario.dynamics.f(x, v) for v in controls])
        rates.append(dt_ds + drift @ n)
    rates = np.array(rates)
    lo, hi = float(rates.min()), float(rates.max())
    if lo >= threshold:
        verdict, margin = "M1", lo - threshold
    elif hi <= -c.sigma:
        verdict, margin = "M2", -c.sigma - hi
    else:
        verdict, margin = "neither", max(lo - threshold, -c.sigma - hi)
    return PointingReport(
        verdict,
        margin,
        mode,
        lo,
        hi,
        threshold,
        full_mode_fails=verdict == "M1" and mode == "sigma_only" and lo < full_threshold,
    )


# weak form of the adjoint equation ---------------------------------------------------


def _scalar_family(horizon: float):
    T = horizon
    return {
        "1": lambda t: np.ones_like(t),
        "t": lambda t: t,
        "t^2": lambda t: t**2,
        "sin": lambda t: np.sin(np.pi * t / T),
        "cos": lambda t: np.cos(np.pi * t / T),
    }


@dataclass
class WeakEquationReport:
    residual: float
    defects: dict[str, float]


def verify_weak_equation(
    scenario: Scenario,
    traj: Trajectory,
    u: ControlSignal,
    path: AdjointPath,
    multipliers: MultiplierReport,
    tangential: bool = True,
    support: tuple[float, float] | None = None,
) -> WeakEquationReport:
    """Defect of the measure-driven adjoint equation tested against a fixed family.

    For each test function ``phi`` the defect is

        | -int <phi, dp> + int <phi, grad d> xi dmu
          + int <phi, Hess(d) p> eta dt - int <phi, f_x^T p> dt | / |phi|_inf

    with ``int <phi, dp>`` telescoped over the grid (``phi`` at segment
    midpoints), the measure term taken from the windowed atoms (``phi`` at
    each atom's centroid) and the two Lebesgue integrals by the trapezoid
    rule on each segment, again with ``phi`` at the midpoint.  The family is coordinate
    directions times ``1, t, t^2, sin(pi t/T), cos(pi t/T)``, plus the same
    functions projected onto the tangent space of the boundary when
    ``tangential``.  ``support`` restricts every test function to a subinterval
    of ``[0, T]`` (multiplying by its indicator), for checks on the interior set.
    """
    t = path.times
    p = path.p
    n = p.shape[1]
    T = float(t[-1])
    cset = scenario.set
    dyn = scenario.dynamics
    controls = _node_controls(u, t)

    ds, normals, hess = cset.geometry_along(t, traj.states)
    on = ds >= -cset.boundary_tol
    hess = np.where(on[:, None, None], hess, 0.0)
    hess_p = np.einsum("kij,kj->ki", hess, p) * path.eta[:, None]
    fx_p = np.array([dyn.f_x(x, v).T @ pk for x, v, pk in zip(traj.states, controls, p)])
    dt = np.diff(t)
    t_mid = 0.5 * (t[:-1] + t[1:])
    dp = np.diff(p, axis=0)
    # segment trapezoid rule for the Lebesgue integrands
    hess_seg = 0.5 * dt[:, None] * (hess_p[:-1] + hess_p[1:])
    fx_seg = 0.5 * dt[:, None] * (fx_p[:-1] + fx_p[1:])
    atoms = multipliers.atom_masses
    centroids = np.array([a.centroid for a in atoms])
    masses = np.array([a.mass for a in atoms])

    def indicator(tau):
        if support is None:
            return np.ones_like(tau)
        return ((tau >= support[0]) & (tau <= support[1])).astype(float)

    def normal_at(tau):
        states = np.array([traj.state_at(s) for s in tau])
        return cset.geometry_along(tau, states)[1]

    n_mid = normal_at(t_mid) if tangential else None
    n_atoms = normal_at(centroids) if tangential else None

    defects = {}
    for name, g in _scalar_family(T).items():
        for i in range(n):
            variants = [("", None)]
            if tangential:
                variants.append(("tan", True))
            for tag, tan in variants:

                def phi(tau, nrm):
                    vec = np.zeros((tau.size, n))
                    vec[:, i] = g(tau) * indicator(tau)
                    if tan:
                        vec -= np.einsum("kj,kj->k", vec, nrm)[:, None] * nrm
                    return vec

                phi_nodes = phi(t, normals if tan else None)
                scale = float(np.max(np.linalg.norm(phi_nodes, axis=1)))
                if scale == 0.0:
                    continue
                phi_mid = phi(t_mid, n_mid)
                lhs = -np.sum(phi_mid * dp)
                measure = -np.sum(phi(centroids, n_atoms) * masses)
                curvature = -np.sum(phi_mid * hess_seg)
                drift = np.sum(phi_mid * fx_seg)
                key = f"e{i + 1}*{name}" + (f"[{tag}]" if tag else "")
                defects[key] = abs(lhs - (measure + curvature + drift)) / scale
    return WeakEquationReport(max(defects.values(), default=0.0), defects)


# full report ------------------------------------------------------------------------


@dataclass
class StructureFlags:
    i_boundary_is_terminal_interval: bool | None
    i_boundary_subset_zero: bool | None
    jumps_normal_only: bool
    continuous_at_tbar: bool | None


@dataclass
class PMPReport:
    pointing: PointingReport
    transversality_residual: float
    maximality_residual: float
    normal_component_sup: float
    weak_equation_residual: float
    structure: StructureFlags
    maximizer: np.ndarray = field(repr=False)
    ties: np.ndarray = field(repr=False)
    weak_defects: dict = field(default_factory=dict, repr=False)
    tbar_variation: float | None = None
    t_bar: float | None = None
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))

    def checks(self) -> list[tuple[str, bool, str]]:
        th = self.thresholds
        rows = [
            ("pointing", self.pointing.verdict in ("M1", "M2"), f"verdict {self.pointing.verdict} ({self.pointing.threshold_mode})"),
            ("transversality", self.transversality_residual <= th["transversality"], f"{self.transversality_residual:.3e}"),
            ("maximality", self.maximality_residual <= th["maximality"], f"{self.maximality_residual:.3e}"),
            ("normal_component", self.normal_component_sup <= th["normal_component"], f"{self.normal_component_sup:.3e}"),
            ("weak_equation", self.weak_equation_residual <= th["weak_equation"], f"{self.weak_equation_residual:.3e}"),
            ("jumps_normal_only", self.structure.jumps_normal_only, ""),
        ]
        if self.pointing.verdict == "M1":
            rows.append(("boundary_terminal_interval", bool(self.structure.i_boundary_is_terminal_interval), ""))
            if self.structure.continuous_at_tbar is not None:
                rows.append(("continuous_at_tbar", self.structure.continuous_at_tbar, f"{self.tbar_variation:.3e}"))
        if self.pointing.verdict == "M2":
            rows.append(("boundary_subset_zero", bool(self.structure.i_boundary_subset_zero), ""))
        return rows

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks())

    def summary(self) -> str:
        lines = [f"{'PASS' if ok else 'FAIL'}  {name:28s} {info}".rstrip() for name, ok, info in self.checks()]
        if self.pointing.full_mode_fails:
            lines.append("NOTE  outward pointing holds against sigma only, not against gamma + beta + sigma")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {
            "pointing": asdict(self.pointing),
            "transversality_residual": self.transversality_residual,
            "maximality_residual": self.maximality_residual,
            "normal_component_sup": self.normal_component_sup,
            "weak_equation_residual": self.weak_equation_residual,
            "weak_defects": {k: float(v) for k, v in sorted(self.weak_defects.items())},
            "structure": asdict(self.structure),
            "t_bar": self.t_bar,
            "tbar_variation": self.tbar_variation,
            "tie_fraction": [float(v) for v in self.ties.mean(axis=0)],
            "checks": [{"name": n, "passed": ok, "info": info} for n, ok, info in self.checks()],
            "passed": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(_plain(self.as_dict()), indent=2, sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def verify_theorem(
    scenario: Scenario,
    traj: Trajectory,
    u: ControlSignal,
    path: AdjointPath,
    structure: BoundaryStructure | None = None,
    pointing_mode: str = "sigma_only",
    thresholds: dict | None = None,
    multipliers: MultiplierReport | None = None,
    jumps=None,
) -> PMPReport:
    """Evaluate every condition on one (finest) penalised run.

    ``jumps`` overrides the jumps of ``path``, e.g. with the persistent jumps
    of a :class:`~sweepctl.adjoint.LimitStudy`.
    """
    th = dict(DEFAULT_THRESHOLDS)
    th.update(thresholds or {})
    structure = structure or detect_crossings(scenario, traj)
    T = scenario.horizon
    w = ENDPOINT_FRACTION * T
    pointing = check_pointing(scenario, traj, u, pointing_mode, structure)

    transversality = float(np.linalg.norm(path.p[-1] + scenario.cost.gradient(traj.final_state)))

    t = path.times
    inner = (t >= w) & (t <= T - w)
    controls = _node_controls(u, t)
    maximizer = np.empty_like(controls)
    ties = np.zeros(controls.shape, dtype=bool)
    gaps = np.zeros(t.size)
    for k, (x, v, pk) in enumerate(zip(traj.states, controls, path.p)):
        c = scenario.dynamics.f_u(x, v).T @ pk
        best = argmax_linear(scenario.control_set, c)
        maximizer[k] = best.value
        # coefficients below the maximality tolerance leave the coordinate undetermined
        ties[k] = best.ties | (np.abs(c) <= th["maximality"])
        gaps[k] = c @ best.value - c @ v
    maximality = float(max(0.0, np.max(gaps[inner]))) if np.any(inner) else 0.0

    n_sup = normal_component_sup(path, structure, T)
    multipliers = multipliers or extract_multipliers(path, traj, path.epsilon)
    weak = verify_weak_equation(scenario, traj, u, path, multipliers)

    aligned = True
    for jump in path.jumps if jumps is None else jumps:
        normal = scenario.set.normal(jump.time, traj.state_at(min(jump.time, T)))
        aligned &= jump_alignment(jump, normal) <= th["jump_angle"]

    tbar_var = None
    continuous = None
    if structure.t_bar is not None and w < structure.t_bar < T - w:
        tbar_var = local_variation(t, path.p, structure.t_bar, JUMP_RADIUS_FACTOR * path.epsilon)
        continuous = tbar_var <= th["tbar_variation"]

    # under inward pointing the state leaves the contact band at rate >= sigma
    sigma = scenario.constants.sigma
    leave = contact_band(scenario, traj) / sigma if sigma > 0 else 0.0
    flags = StructureFlags(
        i_boundary_is_terminal_interval=structure.boundary_is_terminal_interval(th["structure_time"]),
        i_boundary_subset_zero=structure.boundary_subset_of_zero(th["structure_time"] + leave),
        jumps_normal_only=bool(aligned),
        continuous_at_tbar=continuous,
    )
    return PMPReport(
        pointing=pointing,
        transversality_residual=transversality,
        maximality_residual=maximality,
        normal_component_sup=n_sup,
        weak_equation_residual=weak.residual,
        structure=flags,
        maximizer=maximizer,
        ties=ties,
        weak_defects=weak.defects,
        tbar_variation=tbar_var,
        t_bar=structure.t_bar,
        thresholds=th,
    )
