import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from scenarios import SQRT2, affine_interior, example1, inward_drift, rising_halfspace, u_star
from sweepctl.dynamics import (
    detect_crossings,
    integrate_catching_up,
    integrate_regularized,
    penetration_report,
    velocity_bound_holds,
)
from sweepctl.geometry import HalfSpace
from sweepctl.model import ControlSignal, ScenarioError


@pytest.fixture(scope="module")
def ex1():
    return example1()


def test_boundary_layer_depth(ex1):
    eps = 1e-3
    traj = integrate_regularized(ex1, u_star(ex1), eps)
    assert traj.step == pytest.approx(eps / 4)
    x, y = traj.final_state
    assert x == pytest.approx(-1.0, abs=1e-12)
    # steady state of y' = -y/eps - 1 is y = -eps; the splitting shifts it slightly
    assert y == pytest.approx(-eps, rel=0.01)


def test_no_contact_is_linear_motion():
    sc = example1(y0=2.0)
    u = u_star(sc)
    traj = integrate_regularized(sc, u, 1e-2)
    expected = sc.x0 + traj.times[:, None] * np.array([-1.0, -1.0])
    np.testing.assert_allclose(traj.states, expected, atol=1e-12)
    assert penetration_report(traj, 1e-2, SQRT2, 0.0).max_ratio == 0.0


@pytest.mark.parametrize("eps", [1e-2, 1e-3])
def test_penetration_bound(ex1, eps):
    traj = integrate_regularized(ex1, u_star(ex1), eps)
    rep = penetration_report(traj, eps, SQRT2, 0.0)
    assert rep.max_distance <= eps * SQRT2
    assert rep.max_ratio <= 1.1
    assert rep.passed
    # steady layer: ratio close to |u_y| / (beta + gamma)
    assert rep.max_ratio == pytest.approx(1 / SQRT2, abs=0.01)


def test_catching_up_closed_form(ex1):
    spi = 50
    traj = integrate_catching_up(ex1, u_star(ex1), spi)
    t = traj.times
    np.testing.assert_allclose(traj.states[:, 0], -t, atol=1e-12)
    np.testing.assert_allclose(traj.states[:, 1], np.maximum(0.5 - t, 0.0), atol=1e-12)
    assert np.all(traj.distance <= ex1.set.boundary_tol)
    assert velocity_bound_holds(traj, SQRT2, 0.0)


def test_catching_up_static_fixed_point():
    sc = replace(rising_halfspace(), set=HalfSpace(np.array([0.0, 1.0])))
    traj = integrate_catching_up(sc, sc.constant_control([0.0]), 10)
    np.testing.assert_array_equal(traj.states, np.zeros_like(traj.states))


def test_catching_up_swept_by_moving_halfspace():
    sc = rising_halfspace()
    traj = integrate_catching_up(sc, sc.constant_control([0.0]), 10)
    np.testing.assert_allclose(traj.states[:, 1], traj.times, atol=1e-12)
    assert velocity_bound_holds(traj, 0.0, 1.0)


def test_regularized_velocity_bound(ex1):
    traj = integrate_regularized(ex1, u_star(ex1), 1e-3)
    assert velocity_bound_holds(traj, SQRT2, 0.0)


def test_detect_crossings_exact(ex1):
    traj = integrate_catching_up(ex1, u_star(ex1), 200)
    st = detect_crossings(ex1, traj)
    assert st.t_bar == pytest.approx(0.5, abs=1e-5)
    assert len(st.i_boundary) == 1
    a, b = st.i_boundary[0]
    assert a == pytest.approx(0.5, abs=1e-5) and b == 1.0
    assert st.covers()


def test_detect_crossings_regularized(ex1):
    traj = integrate_regularized(ex1, u_star(ex1), 1e-3)
    st = detect_crossings(ex1, traj)
    assert len(st.crossing_times) == 1
    assert abs(st.crossing_times[0] - 0.5) <= 2e-3
    assert st.boundary_is_terminal_interval(1e-9)
    assert st.covers()


def test_detect_crossings_interior_only():
    sc = affine_interior()
    traj = integrate_regularized(sc, sc.constant_control([0.2, -0.3]), 1e-2)
    st = detect_crossings(sc, traj)
    assert st.i_boundary == [] and st.t_bar is None
    assert st.i_interior == [(0.0, 1.0)]


def test_inward_drift_touches_only_at_start():
    sc = inward_drift()
    u = sc.constant_control([0.0])
    for traj in (integrate_regularized(sc, u, 1e-4), integrate_catching_up(sc, u, 100)):
        st = detect_crossings(sc, traj)
        assert st.boundary_subset_of_zero(1e-3)


def test_scheme_consistency_first_order(ex1):
    """Sup-norm gaps between successive step refinements shrink at least linearly."""
    eps = 1e-2
    u = u_star(ex1)
    runs = [integrate_regularized(ex1, u, eps, spi) for spi in (5, 10, 20, 40)]
    gaps = []
    for coarse, fine in zip(runs, runs[1:]):
        gaps.append(np.max(np.linalg.norm(fine.states[::2] - coarse.states, axis=1)))
    for g0, g1 in zip(gaps, gaps[1:]):
        assert g1 <= 0.55 * g0


def test_oracle_agreement_decreases(ex1):
    u = u_star(ex1)
    gaps = []
    for eps in (1e-2, 1e-3):
        reg = integrate_regularized(ex1, u, eps)
        catch = integrate_catching_up(ex1, u, reg.steps_per_interval)
        gaps.append(np.max(np.linalg.norm(reg.states - catch.states, axis=1)))
    assert gaps[1] < gaps[0]


def test_grid_mismatch_rejected(ex1):
    with pytest.raises(ScenarioError):
        integrate_regularized(ex1, ControlSignal(2.0, np.zeros((4, 2))), 1e-2)
    with pytest.raises(ScenarioError):
        integrate_regularized(ex1, u_star(ex1), 0.0)
    with pytest.raises(ScenarioError):
        ControlSignal(1.0, np.zeros((0, 2)))


def test_csv_export_deterministic(ex1, tmp_path):
    traj = integrate_regularized(ex1, u_star(ex1, 4), 0.05, 2)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    traj.to_csv(a)
    integrate_regularized(ex1, u_star(ex1, 4), 0.05, 2).to_csv(b)
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.reader(a.open()))
    assert rows[0] == ["t", "x_1", "x_2", "d", "d_signed"]
    assert len(rows) == traj.steps + 2
    assert float(rows[-1][0]) == 1.0
    assert math.isclose(float(rows[-1][2]), traj.final_state[1], rel_tol=0, abs_tol=0)
