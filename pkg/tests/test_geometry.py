import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenarios import ELLIPSE, FAMILIES, HOLE, boundary_points
from sweepctl.geometry import (
    Ball,
    BallComplement,
    HalfSpace,
    LinearMotion,
    OutOfProxBand,
    ProjectionFailure,
    prox_check,
)

HALF = HalfSpace(np.array([0.0, 1.0]))
UNIT = Ball(LinearMotion(np.zeros(2)), LinearMotion(1.0))


def test_signed_distance_examples():
    assert HALF.signed_distance(0.0, [1.0, -2.0]) == 2.0
    assert HALF.signed_distance(0.0, [1.0, 2.0]) == -2.0
    assert UNIT.signed_distance(0.0, [2.0, 0.0]) == 1.0


def test_project_examples():
    np.testing.assert_array_equal(HALF.project(0.0, [3.0, -2.0]), [3.0, 0.0])
    np.testing.assert_array_equal(UNIT.project(0.0, [2.0, 0.0]), [1.0, 0.0])
    np.testing.assert_array_equal(HALF.project(0.0, [3.0, 2.0]), [3.0, 2.0])


def test_distance_gradient_branches():
    np.testing.assert_array_equal(HALF.distance_gradient(0.0, [0.0, -1.0]), [0.0, -1.0])
    np.testing.assert_array_equal(HALF.distance_gradient(0.0, [5.0, 0.0]), [0.0, -1.0])
    np.testing.assert_array_equal(HALF.distance_gradient(0.0, [0.0, 3.0]), [0.0, 0.0])


def test_distance_hessian_examples():
    np.testing.assert_array_equal(HALF.distance_hessian(0.0, [2.0, 0.0]), np.zeros((2, 2)))
    np.testing.assert_allclose(UNIT.distance_hessian(0.0, [2.0, 0.0]), np.diag([0.0, 0.5]), atol=1e-15)
    np.testing.assert_allclose(UNIT.distance_hessian(0.0, [0.0, 2.0]), np.diag([0.5, 0.0]), atol=1e-15)
    # strictly inside: zero by convention
    np.testing.assert_array_equal(UNIT.distance_hessian(0.0, [0.2, 0.1]), np.zeros((2, 2)))


def test_set_velocity_examples():
    assert HALF.set_velocity(0.3, [1.0, 0.0]) == 0.0
    rising = HalfSpace(np.array([0.0, 1.0]), LinearMotion(0.0, 1.0))
    assert rising.set_velocity(0.4, [0.0, 0.41]) == pytest.approx(1.0)
    shrinking = Ball(LinearMotion(np.zeros(2)), LinearMotion(1.0, -1.0))
    assert shrinking.set_velocity(0.0, [2.0, 0.0]) == pytest.approx(1.0)


def test_sublevel_set_velocity_matches_difference_quotient():
    x = np.array([2.4, 0.1])
    t, dt = 0.3, 1e-4
    fd = (ELLIPSE.signed_distance(t + dt, x) - ELLIPSE.signed_distance(t - dt, x)) / (2 * dt)
    assert float(ELLIPSE.set_velocity(t, x)) == pytest.approx(float(fd), abs=1e-7)


def test_out_of_band_raises():
    hole = BallComplement(LinearMotion(np.zeros(2)), LinearMotion(1.0))
    with pytest.raises(OutOfProxBand):
        hole.project(0.0, [0.1, 0.0])  # distance 0.9 >= rho/2 = 0.5
    with pytest.raises(OutOfProxBand):
        Ball(LinearMotion(np.zeros(2)), LinearMotion(1.0), prox_radius=1.0).project(0.0, [3.0, 0.0])


def test_ball_complement_rho_cannot_exceed_radius():
    with pytest.raises(ValueError):
        BallComplement(LinearMotion(np.zeros(2)), LinearMotion(1.0), prox_radius=2.0)


def test_sublevel_projection_failure():
    with pytest.raises(ProjectionFailure):
        ELLIPSE.signed_distance(0.0, [1e8, 1e8])
    # the centre has no unique nearest boundary point
    with pytest.raises(ProjectionFailure):
        ELLIPSE.signed_distance(0.0, [0.5, -0.2])


def test_prox_check_examples():
    rng = np.random.default_rng(0)
    ang = rng.uniform(0, 2 * np.pi, 50)
    circle = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    inside = circle * rng.uniform(0, 1, (50, 1))
    assert prox_check(UNIT, 0.0, circle, inside).max_violation <= 0.0
    line = np.stack([rng.normal(size=50), np.zeros(50)], axis=1)
    upper = np.stack([rng.normal(size=50), rng.uniform(0, 3, 50)], axis=1)
    assert prox_check(HALF, 0.0, line, upper).max_violation <= 0.0
    tight = prox_check(HOLE, 0.0, [[1.0, 0.0]], [[-1.0, 0.0]])
    assert tight.max_violation == pytest.approx(0.0, abs=1e-15)
    assert tight.passed


# sampled invariants -----------------------------------------------------------------


@pytest.mark.parametrize("name", list(FAMILIES))
def test_offset_points_have_exact_signed_distance(name):
    model, (lo, hi) = FAMILIES[name]
    rng = np.random.default_rng(1)
    theta = rng.uniform(-np.pi, np.pi, 500)
    t = 0.7
    foot, n = boundary_points(model, t, theta)
    s = rng.uniform(lo, hi, 500)
    x = foot + s[:, None] * n
    np.testing.assert_allclose(model.signed_distance(t, x), s, atol=1e-10)
    outside = s > 0
    np.testing.assert_allclose(model.project(t, x)[outside], foot[outside], atol=1e-10)
    np.testing.assert_array_equal(model.project(t, x)[~outside], x[~outside])


@pytest.mark.parametrize("name", list(FAMILIES))
def test_gradient_projection_identity(name):
    model, (_, hi) = FAMILIES[name]
    rng = np.random.default_rng(2)
    foot, n = boundary_points(model, 0.4, rng.uniform(-np.pi, np.pi, 300))
    x = foot + rng.uniform(0.01, hi, (300, 1)) * n
    d = model.signed_distance(0.4, x)
    identity = (x - model.project(0.4, x)) / d[:, None]
    np.testing.assert_allclose(model.distance_gradient(0.4, x), identity, atol=1e-9)


@pytest.mark.parametrize("name", list(FAMILIES))
def test_hypomonotonicity(name):
    model, _ = FAMILIES[name]
    rng = np.random.default_rng(3)
    foot, n = boundary_points(model, 0.2, rng.uniform(-np.pi, np.pi, 200))
    dz = n[:, None, :] - n[None, :, :]
    dx = foot[:, None, :] - foot[None, :, :]
    lhs = np.einsum("ijk,ijk->ij", dz, dx)
    assert np.all(lhs >= -np.sum(dx**2, axis=-1) / model.prox_radius - 1e-8)


@settings(max_examples=60, deadline=None)
@given(
    theta=st.floats(-np.pi, np.pi),
    s=st.floats(-0.2, 0.4),
    t=st.floats(0.0, 1.0),
    name=st.sampled_from(list(FAMILIES)),
)
def test_projection_idempotent_property(theta, s, t, name):
    model, _ = FAMILIES[name]
    foot, n = boundary_points(model, t, np.array([theta]))
    x = foot[0] + s * n[0]
    p = model.project(t, x)
    np.testing.assert_allclose(model.project(t, p), p, atol=1e-10)
    assert float(model.signed_distance(t, p)) <= model.boundary_tol


@settings(max_examples=60, deadline=None)
@given(
    theta=st.floats(-np.pi, np.pi),
    s=st.floats(0.05, 0.4),
    name=st.sampled_from(list(FAMILIES)),
)
def test_hessian_annihilates_normal_property(theta, s, name):
    model, _ = FAMILIES[name]
    foot, n = boundary_points(model, 0.5, np.array([theta]))
    x = foot[0] + s * n[0]
    H = model.distance_hessian(0.5, x)
    g = model.distance_gradient(0.5, x)
    np.testing.assert_allclose(H, H.T, atol=1e-12)
    assert np.linalg.norm(H @ g) <= 1e-8
    assert abs(np.linalg.norm(g) - 1.0) <= 1e-8


@settings(max_examples=40, deadline=None)
@given(
    theta=st.floats(-np.pi, np.pi),
    s=st.floats(-0.2, 0.4).filter(lambda v: abs(v) > 1e-3),
    name=st.sampled_from(list(FAMILIES)),
)
def test_finite_difference_consistency_property(theta, s, name):
    model, _ = FAMILIES[name]
    t, h = 0.3, 1e-5
    foot, n = boundary_points(model, t, np.array([theta]))
    x = foot[0] + s * n[0]
    eye = np.eye(2)
    grad_fd = np.array([(model.signed_distance(t, x + h * e) - model.signed_distance(t, x - h * e)) / (2 * h) for e in eye])
    np.testing.assert_allclose(model.normal(t, x), grad_fd, atol=1e-5)
    hess_fd = np.array([(model.normal(t, x + h * e) - model.normal(t, x - h * e)) / (2 * h) for e in eye])
    H = model.signed_hessian(t, x)
    assert np.max(np.abs(H - hess_fd)) <= 1e-5 * max(1.0, np.max(np.abs(H)))
