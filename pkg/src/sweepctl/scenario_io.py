"""Scenario files: JSON documents validated against a schema."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .geometry import Ball, GeometryError, BallComplement, HalfSpace, LinearMotion, MovingSetModel, Sublevel
from .model import (
    DYNAMICS_REGISTRY,
    Constants,
    ControlSet,
    CostModel,
    Dynamics,
    Numerics,
    Scenario,
    ScenarioError,
    affine,
    control_direct,
)

SCHEMA_VERSION = 1

_number = {"type": "number"}
_vector = {"type": "array", "items": _number, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_positive = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}


def _motion(value):
    return {
        "type": "object",
        "properties": {"initial": value, "rate": value},
        "required": ["initial"],
        "additionalProperties": False,
    }


def _set_variant(kind, params, required):
    return {
        "type": "object",
        "properties": {
            "kind": {"const": kind},
            "params": {"type": "object", "properties": params, "required": required, "additionalProperties": False},
            "prox_radius": _positive,
            "set_lipschitz": _nonneg,
        },
        "required": ["kind", "params"],
        "additionalProperties": False,
    }


_ball_params = {"center": _motion(_vector), "radius": _motion(_number)}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "set": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["halfspace", "ball", "ball-complement", "sublevel"]}},
            "allOf": [
                {"if": {"properties": {"kind": {"const": kind}}}, "then": variant}
                for kind, variant in (
                    ("halfspace", _set_variant("halfspace", {"normal": _vector, "offset": _motion(_number)}, ["normal"])),
                    ("ball", _set_variant("ball", _ball_params, ["center", "radius"])),
                    ("ball-complement", _set_variant("ball-complement", _ball_params, ["center", "radius"])),
                    (
                        "sublevel",
                        _set_variant(
                            "sublevel",
                            {
                                "function": {"type": "string"},
                                "dimension": {"type": "integer", "minimum": 1},
                                "args": {"type": "object"},
                            },
                            ["function"],
                        ),
                    ),
                )
            ],
        },
        "dynamics": {
            "type": "object",
            "properties": {
                "kind": {"type": "string"},
                "A": _matrix,
                "B": _matrix,
                "c": _vector,
                "params": {"type": "object"},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "control_set": {
            "type": "object",
            "properties": {"lo": _vector, "hi": _vector},
            "required": ["lo", "hi"],
            "additionalProperties": False,
        },
        "cost": {
            "type": "object",
            "properties": {"kind": {"enum": ["linear", "quadratic"]}, "coefficients": _vector},
            "required": ["kind", "coefficients"],
            "additionalProperties": False,
        },
        "horizon": _positive,
        "x0": _vector,
        "constants": {
            "type": "object",
            "properties": {"beta": _nonneg, "k": _nonneg, "rho": _positive, "gamma": _nonneg, "sigma": _nonneg},
            "required": ["beta", "k", "rho", "gamma", "sigma"],
            "additionalProperties": False,
        },
        "numerics": {
            "type": "object",
            "properties": {
                "epsilon": _positive,
                "eps_schedule": {"type": "array", "items": _positive},
                "control_intervals": {"type": "integer", "minimum": 1},
                "steps_per_interval": {"type": ["integer", "null"], "minimum": 1},
                "pointing_mode": {"enum": ["full", "sigma_only"]},
                "thresholds": {"type": "object", "additionalProperties": _nonneg},
            },
            "additionalProperties": False,
        },
    },
    "required": ["schema_version", "set", "dynamics", "control_set", "cost", "horizon", "x0", "constants"],
    "additionalProperties": False,
}


def _field(path) -> str:
    return "/".join(str(p) for p in path) or "<root>"


def validate_document(doc: dict) -> None:
    """Raise :class:`ScenarioError` naming the offending field."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.path), list(map(str, e.path))))
    if not errors:
        return
    err = errors[0]
    _raise(list(err.absolute_path), err.message)


def _raise(path, message):
    raise ScenarioError(f"schema violation at {_field(path)}: {message}")


def _motion_from(block, vector: bool = False) -> LinearMotion:
    if not vector:
        return LinearMotion(float(block["initial"]), float(block.get("rate", 0.0)))
    initial = np.asarray(block["initial"], dtype=float)
    rate = np.broadcast_to(np.asarray(block.get("rate", 0.0), dtype=float), initial.shape).copy()
    return LinearMotion(initial, rate)


def _build_set(block: dict) -> MovingSetModel:
    kind, params = block["kind"], block["params"]
    extra = {k: float(block[k]) for k in ("prox_radius", "set_lipschitz") if k in block}
    try:
        if kind == "halfspace":
            offset = _motion_from(params.get("offset", {"initial": 0.0}))
            return HalfSpace(np.asarray(params["normal"], dtype=float), offset, **extra)
        if kind in ("ball", "ball-complement"):
            cls = Ball if kind == "ball" else BallComplement
            return cls(_motion_from(params["center"], vector=True), _motion_from(params["radius"]), **extra)
        return Sublevel(params["function"], dict(params.get("args", {})), int(params.get("dimension", 2)), **extra)
    except ValueError as exc:
        raise ScenarioError(f"set: {exc}") from exc


def _build_dynamics(block: dict, n: int) -> Dynamics:
    kind = block["kind"]
    if kind == "control_direct":
        return control_direct(n)
    if kind == "affine":
        missing = [k for k in ("A", "B") if k not in block]
        if missing:
            _raise(["dynamics"], f"affine dynamics needs {', '.join(missing)}")
        return affine(block["A"], block["B"], block.get("c"))
    if kind in DYNAMICS_REGISTRY:
        return DYNAMICS_REGISTRY[kind](dict(block.get("params", {})))
    _raise(["dynamics", "kind"], f"unknown dynamics kind {kind!r}")


def scenario_from_document(doc: dict, validate: bool = True) -> Scenario:
    validate_document(doc)
    x0 = np.asarray(doc["x0"], dtype=float)
    cs = doc["control_set"]
    if len(cs["lo"]) != len(cs["hi"]):
        _raise(["control_set"], "lo and hi have different lengths")
    lo, hi = np.asarray(cs["lo"], dtype=float), np.asarray(cs["hi"], dtype=float)
    if np.any(lo > hi):
        bad = int(np.flatnonzero(lo > hi)[0])
        _raise(["control_set", "lo", bad], f"lower bound {lo[bad]} exceeds upper bound {hi[bad]}")
    cost = doc["cost"]
    if len(cost["coefficients"]) != x0.size:
        _raise(["cost", "coefficients"], f"expected {x0.size} entries")
    num = doc.get("numerics", {})
    schedule = tuple(float(e) for e in num.get("eps_schedule", ()))
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        _raise(["numerics", "eps_schedule"], "schedule must be strictly decreasing")
    scenario = Scenario(
        set=_build_set(doc["set"]),
        dynamics=_build_dynamics(doc["dynamics"], x0.size),
        control_set=ControlSet(lo, hi),
        cost=CostModel(cost["kind"], cost["coefficients"]),
        horizon=float(doc["horizon"]),
        x0=x0,
        constants=Constants(**{k: float(v) for k, v in doc["constants"].items()}),
        numerics=Numerics(
            epsilon=num.get("epsilon"),
            eps_schedule=schedule,
            control_intervals=int(num.get("control_intervals", 20)),
            steps_per_interval=num.get("steps_per_interval"),
            pointing_mode=num.get("pointing_mode", "sigma_only"),
            thresholds=dict(num.get("thresholds", {})),
        ),
        document=doc,
    )
    if validate:
        try:
            scenario.validate()
        except GeometryError as exc:
            raise ScenarioError(f"scenario geometry rejected: {exc}") from exc
    return scenario


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document.

    Raises :class:`ScenarioError` for malformed JSON (with line and column),
    schema violations (with the field path), an infeasible ``x0`` or a
    ``beta`` below the sampled size of ``f``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        _raise([], "a scenario must be a JSON object")
    return scenario_from_document(doc)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror or exc}") from exc
    return parse_scenario(text)


def bundled_example(name: str = "example1") -> Scenario:
    """A scenario shipped with the package (``example1``: half-plane, ``f = u``)."""
    return parse_scenario(resources.files("sweepctl.data").joinpath(f"{name}.json").read_text(encoding="utf-8"))


# emission ------------------------------------------------------------------------


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _motion_doc(m: LinearMotion) -> dict:
    initial = np.asarray(m.initial, dtype=float)
    rate = np.broadcast_to(np.asarray(m.rate, dtype=float), initial.shape)
    return {"initial": initial.tolist(), "rate": rate.tolist()}


def _set_doc(s: MovingSetModel) -> dict:
    if isinstance(s, HalfSpace):
        params = {"normal": _plain(s.normal_vector), "offset": _motion_doc(s.offset)}
    elif isinstance(s, Ball):
        params = {"center": _motion_doc(s.center), "radius": _motion_doc(s.radius)}
    elif isinstance(s, Sublevel):
        params = {"function": s.function, "dimension": s.dimension, "args": _plain(s.params)}
    else:
        raise ScenarioError(f"cannot serialise set of type {type(s).__name__}")
    return {"kind": s.kind, "params": params, "prox_radius": s.prox_radius, "set_lipschitz": s.set_lipschitz}


def _dynamics_doc(d: Dynamics) -> dict:
    if d.name == "control_direct":
        return {"kind": "control_direct"}
    if d.name == "affine":
        return {"kind": "affine", **{k: _plain(d.params[k]) for k in ("A", "B", "c")}}
    return {"kind": d.name, "params": _plain(d.params)}


def scenario_document(s: Scenario) -> dict:
    num = s.numerics
    numerics = {
        "control_intervals": num.control_intervals,
        "steps_per_interval": num.steps_per_interval,
        "pointing_mode": num.pointing_mode,
        "eps_schedule": list(num.eps_schedule),
        "thresholds": dict(num.thresholds),
    }
    if num.epsilon is not None:
        numerics["epsilon"] = num.epsilon
    c = s.constants
    return {
        "schema_version": SCHEMA_VERSION,
        "set": _set_doc(s.set),
        "dynamics": _dynamics_doc(s.dynamics),
        "control_set": {"lo": _plain(s.control_set.lo), "hi": _plain(s.control_set.hi)},
        "cost": {"kind": s.cost.kind, "coefficients": _plain(s.cost.coefficients)},
        "horizon": s.horizon,
        "x0": _plain(s.x0),
        "constants": {"beta": c.beta, "k": c.k, "rho": c.rho, "gamma": c.gamma, "sigma": c.sigma},
        "numerics": numerics,
    }


def emit_scenario(s: Scenario) -> str:
    """Canonical JSON text; ``parse_scenario`` inverts it."""
    return json.dumps(scenario_document(s), indent=2, sort_keys=True) + "\n"


def scenarios_equal(a: Scenario, b: Scenario) -> bool:
    """Equality of the data carried by two scenarios."""
    return scenario_document(a) == scenario_document(b)
