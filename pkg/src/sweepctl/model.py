"""Problem data: control sets and signals, dynamics, terminal costs, scenarios."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import MovingSetModel

U_TOL = 1e-12


class ScenarioError(ValueError):
    """Inconsistent or infeasible problem data."""


@dataclass(frozen=True)
class ControlSet:
    """Box ``prod_i [lo_i, hi_i]``, the compact convex control set."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ScenarioError("control set bounds must be vectors of equal length")
        if np.any(lo > hi):
            raise ScenarioError(f"control set has lo > hi: lo={lo.tolist()}, hi={hi.tolist()}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    def vertices(self) -> np.ndarray:
        grids = np.meshgrid(*np.stack([self.lo, self.hi], axis=1), indexing="ij")
        return np.unique(np.stack([g.ravel() for g in grids], axis=1), axis=0)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((count, self.dim))

    def contains(self, v, tol: float = U_TOL) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))


def project_onto_U(U: ControlSet, v) -> np.ndarray:
    """Coordinatewise clamp onto the box."""
    return np.clip(np.asarray(v, dtype=float), U.lo, U.hi)


@dataclass(frozen=True)
class LinearArgmax:
    value: np.ndarray
    ties: np.ndarray


def argmax_linear(U: ControlSet, c) -> LinearArgmax:
    """Maximiser of ``<c, u>`` over the box.

    Zero coefficients do not determine the coordinate; the lower bound is
    returned there and the coordinate is flagged in ``ties``.
    """
    c = np.asarray(c, dtype=float)
    value = np.where(c > 0.0, U.hi, U.lo)
    return LinearArgmax(value, c == 0.0)


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control on a uniform partition of ``[0, horizon]``."""

    horizon: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] == 0:
            raise ScenarioError("a control signal needs at least one interval")
        if not self.horizon > 0.0:
            raise ScenarioError(f"horizon must be positive, got {self.horizon}")
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, horizon: float, intervals: int, value) -> "ControlSignal":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(horizon, np.tile(value, (intervals, 1)))

    @property
    def intervals(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        return self.horizon / self.intervals

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.intervals + 1)

    def at(self, t) -> np.ndarray:
        idx = np.clip((np.asarray(t) / self.dt).astype(int), 0, self.intervals - 1)
        return self.values[idx]

    def with_values(self, values) -> "ControlSignal":
        return ControlSignal(self.horizon, values)

    def l2_distance(self, other: "ControlSignal") -> float:
        if other.values.shape != self.values.shape:
            raise ScenarioError("control signals live on different grids")
        return math.sqrt(self.dt * float(np.sum((self.values - other.values) ** 2)))

    def admissible(self, U: ControlSet) -> bool:
        return U.contains(self.values)


# dynamics ---------------------------------------------------------------------


@dataclass(frozen=True)
class Dynamics:
    """Vector field ``f(x, u)`` with its Jacobians.

    Callables act on a single state ``x`` of shape ``(n,)`` and control
    ``u`` of shape ``(m,)``.
    """

    name: str
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    f_u: Callable[[np.ndarray, np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict, compare=False)
    state_independent: bool = False
    constant_jacobians: bool = False


def control_direct(n: int) -> Dynamics:
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return Dynamics(
        "control_direct",
        lambda x, u: u,
        lambda x, u: zero,
        lambda x, u: eye,
        state_independent=True,
        constant_jacobians=True,
    )


def affine(A, B, c=None) -> Dynamics:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    c = np.zeros(A.shape[0]) if c is None else np.asarray(c, dtype=float)
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0] or c.shape != (A.shape[0],):
        raise ScenarioError("affine dynamics matrices have inconsistent shapes")
    return Dynamics(
        "affine",
        lambda x, u: A @ x + B @ u + c,
        lambda x, u: A,
        lambda x, u: B,
        params={"A": A, "B": B, "c": c},
        state_independent=not np.any(A),
        constant_jacobians=True,
    )


DYNAMICS_REGISTRY: dict[str, Callable[..., Dynamics]] = {}


def register_dynamics(name: str, factory: Callable[..., Dynamics]) -> None:
    """Make a custom vector field available to scenario files under ``name``.

    ``factory`` receives the ``params`` object of the dynamics block.
    """
    if name in ("control_direct", "affine"):
        raise ValueError(f"{name!r} is a builtin dynamics kind")
    DYNAMICS_REGISTRY[name] = factory


# costs ------------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    """Terminal cost, either ``<c, x>`` or ``0.5 |x - x_ref|^2``."""

    kind: str
    coefficients: np.ndarray

    def __post_init__(self):
        if self.kind not in ("linear", "quadratic"):
            raise ScenarioError(f"unknown cost kind {self.kind!r}")
        object.__setattr__(self, "coefficients", np.asarray(self.coefficients, dtype=float))

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return float(self.coefficients @ x)
        return 0.5 * float(np.sum((x - self.coefficients) ** 2))

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "linear":
            return self.coefficients.copy()
        return x - self.coefficients


# scenario ---------------------------------------------------------------------


@dataclass(frozen=True)
class Constants:
    beta: float
    k: float
    rho: float
    gamma: float
    sigma: float


@dataclass(frozen=True)
class Numerics:
    epsilon: float | None = None
    eps_schedule: tuple[float, ...] = ()
    control_intervals: int = 20
    steps_per_interval: int | None = None
    pointing_mode: str = "sigma_only"
    thresholds: dict = field(default_factory=dict, compare=False)

    def steps_for(self, epsilon: float, horizon: float) -> int:
        """Integrator steps per control interval; defaults to step ``epsilon/4``."""
        if self.steps_per_interval is not None:
            return self.steps_per_interval
        return max(1, math.ceil(4.0 * horizon / (epsilon * self.control_intervals) - 1e-9))


@dataclass(frozen=True)
class Scenario:
    set: MovingSetModel
    dynamics: Dynamics
    control_set: ControlSet
    cost: CostModel
    horizon: float
    x0: np.ndarray
    constants: Constants
    numerics: Numerics = field(default_factory=Numerics)
    document: dict | None = field(default=None, compare=False, repr=False)

    @property
    def beta(self) -> float:
        return self.constants.beta

    @property
    def gamma(self) -> float:
        return self.constants.gamma

    @property
    def dim(self) -> int:
        return self.x0.size

    def validate(self, probes: int = 64, seed: int = 0) -> None:
        """Check feasibility of ``x0`` and the declared bound on ``|f|``."""
        if not self.horizon > 0.0:
            raise ScenarioError("horizon must be positive")
        if self.x0.shape != (self.set.dim,):
            raise ScenarioError(f"x0 has dimension {self.x0.size}, set has {self.set.dim}")
        d0 = float(self.set.signed_distance(0.0, self.x0))
        if d0 > self.set.boundary_tol:
            raise ScenarioError(f"infeasible x0: signed distance {d0:.6g} > 0 at t=0")
        rng = np.random.default_rng(seed)
        controls = np.concatenate([self.control_set.vertices(), self.control_set.sample(rng, probes)])
        radius = (self.beta + self.gamma) * self.horizon
        directions = rng.normal(size=(probes, self.dim))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        states = np.concatenate(
            [self.x0[None, :], self.x0 + radius * rng.random((probes, 1)) * directions]
        )
        worst = 0.0
        for x in states:
            for u in controls:
                worst = max(worst, float(np.linalg.norm(self.dynamics.f(x, u))))
        if worst > self.beta * (1 + 1e-9) + 1e-12:
            raise ScenarioError(f"inconsistent beta: sampled |f| reaches {worst:.6g} > beta = {self.beta:.6g}")

    def constant_control(self, value, intervals: int | None = None) -> ControlSignal:
        return ControlSignal.constant(self.horizon, intervals or self.numerics.control_intervals, value)
