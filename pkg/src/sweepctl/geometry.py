"""Calculus on smooth prox-regular moving sets.

Every set family exposes the same vectorised surface: points are arrays of
shape ``(..., n)`` and the time ``t`` is a scalar.  Signed distances are
positive outside ``C(t)``, negative inside and zero on the boundary.

Conventions on the three gradient branches (outside / boundary / interior)
follow the usual one: on the boundary the gradient of the distance is the
unit external normal, in the strict interior it is zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, ClassVar

import numpy as np

CONVEX_PROX_RADIUS = 1e6
BOUNDARY_TOL = 1e-9
SUBLEVEL_BOUNDARY_TOL = 1e-7
SUBLEVEL_TIME_STEP = 1e-6
NEWTON_MAX_ITER = 50
NEWTON_TOL = 1e-12


class GeometryError(Exception):
    """Base class for failures of the set calculus."""


class OutOfProxBand(GeometryError):
    """A point sits at distance >= rho/2 from the set, where the projection
    is no longer guaranteed to be single valued."""


class ProjectionFailure(GeometryError):
    """Newton iteration for a sublevel-set projection did not converge."""


@dataclass(frozen=True)
class LinearMotion:
    """Parameter moving linearly in time, ``value(t) = initial + rate * t``."""

    initial: np.ndarray | float
    rate: np.ndarray | float = 0.0

    def __call__(self, t):
        initial = np.asarray(self.initial, dtype=float)
        t = np.asarray(t, dtype=float)
        if initial.ndim:
            t = t[..., None]
        return initial + np.asarray(self.rate, dtype=float) * t

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(np.atleast_1d(self.rate)))

    @property
    def is_static(self) -> bool:
        return self.speed == 0.0


def _unit(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(norm > 0.0, norm, 1.0)
    return v / safe, norm[..., 0]


def _tangent_projector(normal: np.ndarray) -> np.ndarray:
    n = normal.shape[-1]
    return np.eye(n) - normal[..., :, None] * normal[..., None, :]


@dataclass(frozen=True)
class MovingSetModel:
    """Base class of the smooth moving sets ``C(t)``.

    Subclasses implement :meth:`_foot`, returning the signed distance, the
    nearest boundary point and the unit external normal at that point, and
    :meth:`_signed_hessian`.  Everything else is shared.
    """

    kind: ClassVar[str] = ""
    boundary_tol: ClassVar[float] = BOUNDARY_TOL

    prox_radius: float = field(default=CONVEX_PROX_RADIUS, kw_only=True)
    set_lipschitz: float = field(default=0.0, kw_only=True)

    def __post_init__(self):
        if not self.prox_radius > 0.0:
            raise ValueError(f"prox_radius must be positive, got {self.prox_radius}")
        if self.set_lipschitz < 0.0:
            raise ValueError(f"set_lipschitz must be nonnegative, got {self.set_lipschitz}")

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def intrinsic_speed(self) -> float:
        """Hausdorff-Lipschitz rate implied by the motion descriptors."""
        raise NotImplementedError

    def _foot(self, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def _signed_hessian(self, t, x, ds, foot, normal) -> np.ndarray:
        raise NotImplementedError

    def _check_band(self, ds: np.ndarray) -> None:
        bad = ds >= 0.5 * self.prox_radius
        if np.any(bad):
            worst = float(np.max(ds[bad]))
            raise OutOfProxBand(
                f"{self.kind}: distance {worst:.6g} outside the validity band "
                f"rho/2 = {0.5 * self.prox_radius:.6g}"
            )

    # public surface ---------------------------------------------------------

    def signed_distance(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._foot(t, x)[0]

    def distance(self, t: float, x) -> np.ndarray:
        return np.maximum(self.signed_distance(t, x), 0.0)

    def boundary_projection(self, t: float, x) -> np.ndarray:
        """Nearest point of the boundary, valid on both sides of it."""
        x = np.asarray(x, dtype=float)
        return self._foot(t, x)[1]

    def project(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ds, foot, _ = self._foot(t, x)
        self._check_band(ds)
        return np.where((ds > 0.0)[..., None], foot, x)

    def normal(self, t: float, x) -> np.ndarray:
        """Gradient of the signed distance; the external normal at the nearest
        boundary point, on either side of the boundary."""
        x = np.asarray(x, dtype=float)
        return self._foot(t, x)[2]

    def distance_gradient(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ds, _, normal = self._foot(t, x)
        self._check_band(ds)
        active = ds >= -self.boundary_tol
        return np.where(active[..., None], normal, 0.0)

    def distance_hessian(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ds, foot, normal = self._foot(t, x)
        self._check_band(ds)
        hess = self._signed_hessian(t, x, ds, foot, normal)
        active = ds >= -self.boundary_tol
        return np.where(active[..., None, None], hess, 0.0)

    def signed_hessian(self, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        ds, foot, normal = self._foot(t, x)
        return self._signed_hessian(t, x, ds, foot, normal)

    def set_velocity(self, t: float, x) -> np.ndarray:
        """Partial time derivative of the signed distance."""
        raise NotImplementedError

    def signed_distance_along(self, times, states) -> np.ndarray:
        """Signed distances of ``states[k]`` to ``C(times[k])``."""
        return np.array([float(self.signed_distance(t, x)) for t, x in zip(times, states)])

    def geometry_along(self, times, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Signed distance, external normal and signed-distance Hessian of
        ``points[k]`` relative to ``C(times[k])``."""
        out = [self._geometry_at(t, x) for t, x in zip(times, points)]
        n = self.dim
        if not out:
            return np.empty(0), np.empty((0, n)), np.empty((0, n, n))
        ds, normal, hess = zip(*out)
        return np.array(ds, dtype=float), np.array(normal), np.array(hess)

    def _geometry_at(self, t, x):
        ds, foot, normal = self._foot(t, x)
        return float(ds), normal, self._signed_hessian(t, x, ds, foot, normal)

    def penalty_foot(self, t: float, x: np.ndarray) -> tuple[float, np.ndarray]:
        """Signed distance and projection of a single point, band-checked."""
        ds, foot, _ = self._foot(t, x)
        ds = float(ds)
        if ds >= 0.5 * self.prox_radius:
            self._check_band(np.asarray(ds))
        return ds, (foot if ds > 0.0 else x)

    def on_boundary(self, t: float, x) -> np.ndarray:
        return np.abs(self.signed_distance(t, x)) <= self.boundary_tol

    def contains(self, t: float, x) -> np.ndarray:
        return self.signed_distance(t, x) <= self.boundary_tol


@dataclass(frozen=True)
class HalfSpace(MovingSetModel):
    """``C(t) = {x : <a, x> >= s(t)}`` with a linearly moving offset."""

    kind: ClassVar[str] = "halfspace"

    normal_vector: np.ndarray
    offset: LinearMotion = LinearMotion(0.0)

    def __post_init__(self):
        super().__post_init__()
        a = np.asarray(self.normal_vector, dtype=float)
        if a.ndim != 1 or not np.linalg.norm(a) > 0.0:
            raise ValueError("halfspace normal must be a nonzero vector")
        object.__setattr__(self, "normal_vector", a)

    @property
    def dim(self) -> int:
        return self.normal_vector.size

    @property
    def _scale(self) -> float:
        return float(np.linalg.norm(self.normal_vector))

    def intrinsic_speed(self) -> float:
        return abs(float(self.offset.rate)) / self._scale

    def _foot(self, t, x):
        a_hat = self.normal_vector / self._scale
        ds = self.offset(t) / self._scale - x @ a_hat
        foot = x + ds[..., None] * a_hat
        normal = np.broadcast_to(-a_hat, x.shape)
        return ds, foot, normal

    def _signed_hessian(self, t, x, ds, foot, normal):
        n = self.dim
        return np.zeros(x.shape[:-1] + (n, n))

    def signed_distance_along(self, times, states):
        return self._foot(np.asarray(times, dtype=float), np.asarray(states, dtype=float))[0]

    def geometry_along(self, times, points):
        times = np.asarray(times, dtype=float)
        points = np.asarray(points, dtype=float)
        ds, foot, normal = self._foot(times, points)
        return ds, np.array(normal), self._signed_hessian(times, points, ds, foot, normal)

    def set_velocity(self, t, x):
        x = np.asarray(x, dtype=float)
        rate = float(self.offset.rate) / self._scale
        return np.full(x.shape[:-1], rate)


@dataclass(frozen=True)
class Ball(MovingSetModel):
    """Closed ball with linearly moving center and radius."""

    kind: ClassVar[str] = "ball"

    center: LinearMotion
    radius: LinearMotion

    @property
    def dim(self) -> int:
        return np.atleast_1d(self.center.initial).size

    def intrinsic_speed(self) -> float:
        return self.center.speed + self.radius.speed

    def _radial(self, t, x):
        c = self.center(t)
        r = self.radius(t)
        if np.any(r <= 0.0):
            raise GeometryError(f"{self.kind}: radius is not positive at t={t}")
        unit, norm = _unit(x - c)
        # the centre has no defined direction; any unit vector will do there
        fallback = np.zeros(x.shape[-1])
        fallback[0] = 1.0
        unit = np.where((norm > 0.0)[..., None], unit, fallback)
        return c, r, unit, norm

    def _foot(self, t, x):
        c, r, unit, norm = self._radial(t, x)
        return norm - r, c + r[..., None] * unit, unit

    def signed_distance_along(self, times, states):
        return self._foot(np.asarray(times, dtype=float), np.asarray(states, dtype=float))[0]

    def geometry_along(self, times, points):
        times = np.asarray(times, dtype=float)
        points = np.asarray(points, dtype=float)
        ds, foot, normal = self._foot(times, points)
        return ds, np.array(normal), self._signed_hessian(times, points, ds, foot, normal)

    def _signed_hessian(self, t, x, ds, foot, normal):
        _, _, unit, norm = self._radial(t, x)
        safe = np.where(norm > 0.0, norm, np.inf)
        return _tangent_projector(unit) / safe[..., None, None]

    def set_velocity(self, t, x):
        x = np.asarray(x, dtype=float)
        _, _, unit, _ = self._radial(t, x)
        return -np.sum(unit * np.asarray(self.center.rate, dtype=float), axis=-1) - float(self.radius.rate)


@dataclass(frozen=True)
class BallComplement(Ball):
    """Complement of an open ball, ``{x : |x - c(t)| >= r(t)}``.

    Prox-regular with radius at most ``r``; the projection from inside the
    ball is radial and degenerates at the centre.
    """

    kind: ClassVar[str] = "ball-complement"

    def __post_init__(self):
        if self.prox_radius == CONVEX_PROX_RADIUS:
            object.__setattr__(self, "prox_radius", float(self.radius.initial))
        super().__post_init__()
        if self.prox_radius > float(self.radius.initial) * (1 + 1e-12):
            raise ValueError(
                f"ball-complement prox_radius {self.prox_radius} exceeds radius {self.radius.initial}"
            )

    def _foot(self, t, x):
        c, r, unit, norm = self._radial(t, x)
        return r - norm, c + r[..., None] * unit, -unit

    def _signed_hessian(self, t, x, ds, foot, normal):
        return -super()._signed_hessian(t, x, ds, foot, normal)

    def set_velocity(self, t, x):
        return -super().set_velocity(t, x)


# sublevel sets ---------------------------------------------------------------


@dataclass(frozen=True)
class LevelFunction:
    """Vectorised defining function ``g(t, x, params)`` with derivatives."""

    value: Callable
    gradient: Callable
    hessian: Callable


LEVEL_FUNCTIONS: dict[str, LevelFunction] = {}


def register_level_function(name: str, value: Callable, gradient: Callable, hessian: Callable) -> None:
    LEVEL_FUNCTIONS[name] = LevelFunction(value, gradient, hessian)


def _ellipse_center(t, params):
    return np.asarray(params["center"], dtype=float) + t * np.asarray(
        params.get("center_rate", 0.0), dtype=float
    )


def _ellipse_value(t, x, params):
    axes = np.asarray(params["semi_axes"], dtype=float)
    return np.sum(((x - _ellipse_center(t, params)) / axes) ** 2, axis=-1) - 1.0


def _ellipse_gradient(t, x, params):
    axes = np.asarray(params["semi_axes"], dtype=float)
    return 2.0 * (x - _ellipse_center(t, params)) / axes**2


def _ellipse_hessian(t, x, params):
    axes = np.asarray(params["semi_axes"], dtype=float)
    return np.broadcast_to(np.diag(2.0 / axes**2), x.shape + (x.shape[-1],))


register_level_function("ellipse", _ellipse_value, _ellipse_gradient, _ellipse_hessian)


@dataclass(frozen=True)
class Sublevel(MovingSetModel):
    """``C(t) = {x : g(t, x) <= 0}`` for a registered defining function ``g``.

    The nearest boundary point is found by Newton's method on
    ``x_p + lam * grad g(x_p) = x, g(x_p) = 0`` started from ``x``.
    """

    kind: ClassVar[str] = "sublevel"
    boundary_tol: ClassVar[float] = SUBLEVEL_BOUNDARY_TOL

    function: str
    params: dict = field(default_factory=dict)
    dimension: int = 2

    def __post_init__(self):
        super().__post_init__()
        if self.function not in LEVEL_FUNCTIONS:
            raise ValueError(f"unknown level function {self.function!r}")

    @property
    def dim(self) -> int:
        return self.dimension

    @property
    def _g(self) -> LevelFunction:
        return LEVEL_FUNCTIONS[self.function]

    def intrinsic_speed(self) -> float:
        return self.set_lipschitz

    def _foot(self, t, x):
        g = self._g
        n = x.shape[-1]
        batch = x.reshape(-1, n)
        xp = batch.copy()
        lam = np.zeros(len(batch))
        eye = np.eye(n)
        for _ in range(NEWTON_MAX_ITER):
            grad = g.gradient(t, xp, self.params)
            hess = g.hessian(t, xp, self.params)
            r1 = xp + lam[:, None] * grad - batch
            r2 = g.value(t, xp, self.params)
            if np.max(np.abs(r1), initial=0.0) <= NEWTON_TOL and np.max(np.abs(r2), initial=0.0) <= NEWTON_TOL:
                break
            jac = np.zeros((len(batch), n + 1, n + 1))
            jac[:, :n, :n] = eye + lam[:, None, None] * hess
            jac[:, :n, n] = grad
            jac[:, n, :n] = grad
            rhs = -np.concatenate([r1, r2[:, None]], axis=1)
            try:
                step = np.linalg.solve(jac, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise ProjectionFailure("sublevel projection hit a singular Newton system") from exc
            xp = xp + step[:, :n]
            lam = lam + step[:, n]
        else:
            raise ProjectionFailure(
                f"sublevel projection did not converge in {NEWTON_MAX_ITER} iterations"
            )
        grad = g.gradient(t, xp, self.params)
        normal, _ = _unit(grad)
        sign = np.sign(g.value(t, batch, self.params))
        ds = sign * np.linalg.norm(batch - xp, axis=-1)
        shape = x.shape[:-1]
        return ds.reshape(shape), xp.reshape(x.shape), normal.reshape(x.shape)

    def _signed_hessian(self, t, x, ds, foot, normal):
        g = self._g
        grad_norm = np.linalg.norm(g.gradient(t, foot, self.params), axis=-1)
        proj = _tangent_projector(normal)
        shape_op = proj @ g.hessian(t, foot, self.params) @ proj / grad_norm[..., None, None]
        eye = np.eye(x.shape[-1])
        return shape_op @ np.linalg.inv(eye + ds[..., None, None] * shape_op)

    def set_velocity(self, t, x):
        x = np.asarray(x, dtype=float)
        dt = SUBLEVEL_TIME_STEP
        return (self.signed_distance(t + dt, x) - self.signed_distance(t - dt, x)) / (2 * dt)


# checks ----------------------------------------------------------------------


@dataclass(frozen=True)
class ProxCheckReport:
    max_violation: float
    worst_pair: tuple[int, int]

    @property
    def passed(self) -> bool:
        return self.max_violation <= 1e-9


def prox_check(set_model: MovingSetModel, t: float, boundary_samples, probe_samples) -> ProxCheckReport:
    """Largest value of ``<zeta, y - x> - |y - x|^2 / (2 rho)`` over all pairs of
    boundary points ``x`` (external normal ``zeta``) and probe points ``y`` in C."""
    xs = np.atleast_2d(np.asarray(boundary_samples, dtype=float))
    ys = np.atleast_2d(np.asarray(probe_samples, dtype=float))
    zeta = set_model.normal(t, xs)
    diff = ys[None, :, :] - xs[:, None, :]
    values = np.einsum("in,ijn->ij", zeta, diff) - np.sum(diff**2, axis=-1) / (2 * set_model.prox_radius)
    i, j = np.unravel_index(np.argmax(values), values.shape)
    return ProxCheckReport(float(values[i, j]), (int(i), int(j)))


@dataclass
class BoundaryStructure:
    """Contact structure of a trajectory with the moving boundary.

    ``i_boundary`` and ``i_interior`` are lists of closed ``(start, end)``
    intervals partitioning ``[0, T]``; ``t_bar`` is the first contact time.
    """

    crossing_times: list[float]
    i_boundary: list[tuple[float, float]]
    i_interior: list[tuple[float, float]]
    t_bar: float | None
    horizon: float

    def boundary_is_terminal_interval(self, tol: float) -> bool:
        if not self.i_boundary:
            return True
        return len(self.i_boundary) == 1 and abs(self.i_boundary[0][1] - self.horizon) <= tol

    def boundary_subset_of_zero(self, tol: float) -> bool:
        return all(b <= tol for _, b in self.i_boundary)

    def covers(self, tol: float = 1e-9) -> bool:
        pieces = sorted(self.i_boundary + self.i_interior)
        if not pieces:
            return False
        edge = 0.0
        for a, b in pieces:
            if a > edge + tol:
                return False
            edge = max(edge, b)
        return pieces[0][0] <= tol and edge >= self.horizon - tol
