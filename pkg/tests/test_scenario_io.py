import copy
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenarios import affine_interior, curved_obstacle, inward_drift, rising_halfspace
from sweepctl.geometry import HalfSpace, Sublevel
from sweepctl.model import ScenarioError, register_dynamics, Dynamics
from sweepctl.scenario_io import (
    bundled_example,
    emit_scenario,
    parse_scenario,
    scenario_document,
    scenarios_equal,
)


@pytest.fixture
def doc():
    return scenario_document(bundled_example())


def _parse(d):
    return parse_scenario(json.dumps(d))


def test_bundled_example1():
    sc = bundled_example()
    assert isinstance(sc.set, HalfSpace)
    np.testing.assert_array_equal(sc.set.normal_vector, [0.0, 1.0])
    np.testing.assert_array_equal(sc.control_set.lo, [-1.0, -1.0])
    np.testing.assert_array_equal(sc.control_set.hi, [1.0, -0.5])
    assert sc.cost.kind == "linear" and sc.cost.value([2.0, 3.0]) == 5.0
    assert sc.horizon == 1.0
    assert sc.beta == math.sqrt(2.0) and sc.constants.sigma == 0.5
    assert sc.dynamics.name == "control_direct"


def test_infeasible_x0(doc):
    doc["x0"] = [0.0, -1.0]
    with pytest.raises(ScenarioError, match="infeasible x0"):
        _parse(doc)


def test_inverted_control_bounds(doc):
    doc["control_set"]["lo"] = [2.0, -1.0]
    with pytest.raises(ScenarioError, match="control_set/lo/0"):
        _parse(doc)


def test_inconsistent_beta(doc):
    doc["constants"]["beta"] = 0.5
    with pytest.raises(ScenarioError, match="inconsistent beta"):
        _parse(doc)


@pytest.mark.parametrize(
    "mutate, where",
    [
        (lambda d: d.update(extra=1), "<root>"),
        (lambda d: d["constants"].update(alpha=1.0), "constants"),
        (lambda d: d["set"]["params"].update(radius={"initial": 1.0}), "set/params"),
        (lambda d: d["set"].update(kind="polygon"), "set/kind"),
        (lambda d: d["numerics"].update(pointing_mode="loose"), "numerics/pointing_mode"),
        (lambda d: d.update(horizon=0.0), "horizon"),
        (lambda d: d["cost"].pop("coefficients"), "cost"),
        (lambda d: d["dynamics"].update(kind="quadrotor"), "dynamics/kind"),
        (lambda d: d["numerics"].update(eps_schedule=[1e-3, 1e-2]), "numerics/eps_schedule"),
    ],
)
def test_schema_violations_name_the_field(doc, mutate, where):
    mutate(doc)
    with pytest.raises(ScenarioError, match=f"at {where}"):
        _parse(doc)


def test_malformed_json_reports_line():
    with pytest.raises(ScenarioError, match="line 2"):
        parse_scenario('{\n  "x0": [1, 2,,]\n}')


@pytest.mark.parametrize("make", [affine_interior, curved_obstacle, inward_drift, rising_halfspace, bundled_example])
def test_round_trip(make):
    sc = make()
    again = parse_scenario(emit_scenario(sc))
    assert scenarios_equal(sc, again)
    assert emit_scenario(again) == emit_scenario(sc)


def test_round_trip_sublevel(doc):
    doc["set"] = {
        "kind": "sublevel",
        "params": {"function": "ellipse", "dimension": 2, "args": {"center": [0.0, -1.0], "semi_axes": [3.0, 1.0]}},
        "prox_radius": 0.3,
        "set_lipschitz": 0.0,
    }
    doc["x0"] = [0.0, -0.3]
    sc = _parse(doc)
    assert isinstance(sc.set, Sublevel)
    assert scenarios_equal(sc, parse_scenario(emit_scenario(sc)))


def test_registered_dynamics(doc):
    def factory(params):
        k = float(params["gain"])
        return Dynamics(
            "scaled",
            lambda x, u: k * u,
            lambda x, u: np.zeros((2, 2)),
            lambda x, u: k * np.eye(2),
            params={"gain": k},
            state_independent=True,
        )

    register_dynamics("scaled", factory)
    doc["dynamics"] = {"kind": "scaled", "params": {"gain": 0.5}}
    sc = _parse(doc)
    np.testing.assert_array_equal(sc.dynamics.f(np.zeros(2), np.array([1.0, -1.0])), [0.5, -0.5])
    assert scenarios_equal(sc, parse_scenario(emit_scenario(sc)))
    with pytest.raises(ValueError):
        register_dynamics("affine", factory)


@settings(max_examples=40, deadline=None)
@given(
    y0=st.floats(0.0, 5.0),
    lo=st.floats(-1.0, -0.6),
    offset_rate=st.floats(-0.5, 0.5),
    sigma=st.floats(0.0, 2.0),
)
def test_round_trip_property(y0, lo, offset_rate, sigma):
    base = scenario_document(bundled_example())
    d = copy.deepcopy(base)
    d["x0"] = [0.0, y0]
    d["control_set"]["lo"] = [-1.0, lo]
    d["set"]["params"]["offset"]["rate"] = offset_rate
    d["set"]["set_lipschitz"] = abs(offset_rate)
    d["constants"]["gamma"] = abs(offset_rate)
    d["constants"]["sigma"] = sigma
    sc = _parse(d)
    assert scenario_document(parse_scenario(emit_scenario(sc))) == scenario_document(sc)
