"""
Run configurations: a strict, versioned JSON schema and its parser.

A configuration names one scenario and carries the domain, the physics,
the boundary data, the probe basis, solver settings and scenario options.
Unknown keys are rejected at every level. Semantic checks that a JSON
schema cannot express (arc ranges, obstacle clearance order) are reported
with the same dotted key paths.

Example
-------
>>> cfg = parse_dict({"schema_version": 1, "scenario": "solve",
...                   "domain": {"outer": {"type": "circle", "radius": 1.0},
...                              "obstacle": {"type": "circle", "radius": 0.3},
...                              "mesh_h": 0.1}})
>>> cfg.solver["max_iters"]
50
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Any, Optional

import jsonschema

from .assembly import LameParameters
from .functions import BoundaryFunction
from .geometry import FULL_ARC, DomainSpec, MeshError, shape_from_dict

SCHEMA_VERSION = 1

SCENARIOS = (
    "solve",
    "dtn",
    "control",
    "counterexample-fundamental",
    "counterexample-bounded-probes",
    "rigidity",
    "discriminate-shape",
    "discriminate-obstacle-function",
    "convergence",
    "mesh-build",
    "mesh-validate",
)

_ARC = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_POINT = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

_SHAPE = {
    "type": "object",
    "required": ["type"],
    "additionalProperties": False,
    "properties": {
        "type": {"enum": ["circle", "ellipse", "polygon", "square"]},
        "center": _POINT,
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "semi_axes": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2},
        "rotation": {"type": "number"},
        "vertices": {"type": "array", "items": _POINT, "minItems": 3},
        "side": {"type": "number", "exclusiveMinimum": 0},
    },
    "allOf": [
        {"if": {"properties": {"type": {"const": "circle"}}}, "then": {"required": ["radius"]}},
        {"if": {"properties": {"type": {"const": "ellipse"}}}, "then": {"required": ["semi_axes"]}},
        {"if": {"properties": {"type": {"const": "polygon"}}}, "then": {"required": ["vertices"]}},
        {"if": {"properties": {"type": {"const": "square"}}}, "then": {"required": ["side"]}},
    ],
}

# a number, a constant vector, or a serialized BoundaryFunction
_DATA = {
    "oneOf": [
        {"type": "number"},
        _POINT,
        {
            "type": "object",
            "required": ["kind", "params"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["fourier", "nodal", "closed_form"]},
                "target": {"enum": ["outer", "obstacle"]},
                "params": {"type": "object"},
            },
        },
    ]
}

_DOMAIN = {
    "type": "object",
    "required": ["outer", "mesh_h"],
    "additionalProperties": False,
    "properties": {
        "outer": _SHAPE,
        "obstacle": {"oneOf": [_SHAPE, {"type": "null"}]},
        "mesh_h": {"type": "number", "exclusiveMinimum": 0},
        "control_arc": _ARC,
        "measurement_arc": {"oneOf": [_ARC, {"type": "null"}]},
    },
}

SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "signolab run configuration",
    "type": "object",
    "required": ["schema_version", "scenario"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"type": "integer"},
        "scenario": {"enum": list(SCENARIOS)},
        "domain": _DOMAIN,
        "physics": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["scalar", "elastic"]},
                "mu": {"type": "number", "exclusiveMinimum": 0},
                "lambda": {"type": "number", "exclusiveMinimum": 0},
            },
            "if": {"properties": {"kind": {"const": "elastic"}}},
            "then": {"required": ["mu", "lambda"]},
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dirichlet": _DATA,
                "obstacle_function": _DATA,
                "neumann_arc": {"oneOf": [_ARC, {"type": "null"}]},
            },
        },
        "probes": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 1},
                "bound": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "null"}]},
                "arc": {"oneOf": [_ARC, {"type": "null"}]},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "alphas": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "residual_target": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, {"type": "null"}]},
                "separation_factor": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "options": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "z": _POINT,
                "obstacles": {"type": "array", "items": _SHAPE, "minItems": 1},
                "levels": {"type": "integer", "minimum": 1},
                "margin": {"type": "number"},
                "case": {"enum": ["scalar-harmonic", "elastic-lame"]},
                "hs": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "compare_domain": _DOMAIN,
                "compare_obstacle_function": _DATA,
                "difference_arc": {"oneOf": [_ARC, {"type": "null"}]},
                "mesh_path": {"type": "string"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "figures": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
    },
}

DEFAULTS = {
    "physics": {"kind": "scalar"},
    "data": {"dirichlet": 0.0, "obstacle_function": 0.0, "neumann_arc": None},
    "probes": {"count": 12, "bound": None, "arc": None},
    "solver": {
        "tol": 1e-8,
        "max_iters": 50,
        "alphas": [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8],
        "delta": 0.1,
        "residual_target": None,
        "separation_factor": 10.0,
    },
    "options": {},
    "output": {"dir": "out", "figures": True},
    "seed": 0,
}

# scenarios that build a mesh from the domain block
_NEEDS_DOMAIN = set(SCENARIOS) - {"counterexample-fundamental", "convergence", "mesh-validate"}
_NEEDS_OBSTACLE = _NEEDS_DOMAIN - {"rigidity", "mesh-build"}


class ConfigError(ValueError):
    """Schema or semantic violations; ``violations`` holds ``(key_path, message)`` pairs."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.violations))


@dataclass
class RunConfig:
    scenario: str
    domain: Optional[DomainSpec]
    physics: dict = field(default_factory=lambda: dict(DEFAULTS["physics"]))
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["data"]))
    probes: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["probes"]))
    solver: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["solver"]))
    options: dict = field(default_factory=dict)
    output: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["output"]))
    seed: int = 0
    schema_version: int = SCHEMA_VERSION

    @property
    def lame(self):
        """:class:`LameParameters` for elastic runs, else the string ``"scalar"``."""
        if self.physics["kind"] == "elastic":
            return LameParameters(self.physics["mu"], self.physics["lambda"])
        return "scalar"

    @property
    def ndof(self):
        return 2 if self.physics["kind"] == "elastic" else 1

    def boundary_data(self, key, target):
        return data_value(self.data[key], target)

    def to_dict(self):
        d = {"schema_version": self.schema_version, "scenario": self.scenario}
        if self.domain is not None:
            d["domain"] = self.domain.to_dict()
        d.update({
            "physics": copy.deepcopy(self.physics),
            "data": copy.deepcopy(self.data),
            "probes": copy.deepcopy(self.probes),
            "solver": copy.deepcopy(self.solver),
            "options": copy.deepcopy(self.options),
            "output": copy.deepcopy(self.output),
            "seed": self.seed,
        })
        return d


def data_value(value, target):
    """Turn a configured data entry into something :func:`as_nodal` accepts."""
    if isinstance(value, dict):
        bf = BoundaryFunction.from_dict(value)
        if "target" not in value:
            bf = BoundaryFunction(bf.kind, target, bf.params)
        return bf
    if isinstance(value, list):
        import numpy as np

        return lambda x, v=tuple(value): np.tile(np.asarray(v, dtype=float), (len(np.atleast_2d(x)), 1))
    return float(value)


def _path(err):
    parts = [str(p) for p in err.absolute_path]
    # a missing required key is reported against its parent
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else ""
        parts.append(missing)
    return ".".join(parts) or "<root>"


def _arc_ok(arc):
    return arc is None or (0.0 <= arc[0] <= 1.0 and arc[0] < arc[1] <= arc[0] + 1.0)


def _semantic(raw):
    out = []
    dom = raw.get("domain")
    if dom is not None:
        for key in ("control_arc", "measurement_arc"):
            if not _arc_ok(dom.get(key)):
                out.append((f"domain.{key}", f"arc {dom.get(key)} must satisfy 0 <= a < b <= a + 1, a <= 1"))
    for path, arc in (("data.neumann_arc", raw.get("data", {}).get("neumann_arc")),
                      ("probes.arc", raw.get("probes", {}).get("arc")),
                      ("options.difference_arc", raw.get("options", {}).get("difference_arc"))):
        if not _arc_ok(arc):
            out.append((path, f"arc {arc} must satisfy 0 <= a < b <= a + 1, a <= 1"))
    if dom is not None and raw["scenario"] in _NEEDS_OBSTACLE and dom.get("obstacle") is None:
        out.append(("domain.obstacle", f"scenario {raw['scenario']!r} needs an obstacle"))
    if raw["scenario"] in _NEEDS_DOMAIN and dom is None:
        out.append(("domain", f"scenario {raw['scenario']!r} needs a domain block"))
    if raw["scenario"] == "mesh-validate" and "mesh_path" not in raw.get("options", {}) and dom is None:
        out.append(("options.mesh_path", "mesh-validate needs options.mesh_path or a domain block"))
    probes_arc = raw.get("probes", {}).get("arc")
    if dom is not None and probes_arc is not None and _arc_ok(probes_arc):
        ctrl = dom.get("control_arc", list(FULL_ARC))
        if ctrl[1] - ctrl[0] < 1.0 and not (ctrl[0] <= probes_arc[0] and probes_arc[1] <= ctrl[1]):
            out.append(("probes.arc", f"probe arc {probes_arc} must lie in domain.control_arc {ctrl}"))
    return out


def validate(raw) -> list:
    """All schema and semantic violations of a raw configuration, as ``(key_path, message)``."""
    if not isinstance(raw, dict):
        return [("<root>", "configuration must be a JSON object")]
    if "schema_version" in raw and raw["schema_version"] != SCHEMA_VERSION:
        return [("schema_version", f"version {raw['schema_version']} is not supported (expected {SCHEMA_VERSION})")]
    v = jsonschema.Draft7Validator(SCHEMA)
    errs = sorted(v.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    out = [(_path(e), e.message) for e in errs]
    if not out:
        out = _semantic(raw)
    return out


def _merge(defaults, given):
    d = copy.deepcopy(defaults)
    d.update(copy.deepcopy(given or {}))
    return d


def _domain(d):
    d = dict(d)
    d.setdefault("control_arc", list(FULL_ARC))
    if d.get("measurement_arc") is None:
        d["measurement_arc"] = d["control_arc"]
    try:
        return DomainSpec.from_dict(d)
    except MeshError as exc:
        raise ConfigError([("domain", str(exc))]) from exc


def parse_dict(raw) -> RunConfig:
    """Validate a configuration mapping and fill the documented defaults."""
    errs = validate(raw)
    if errs:
        raise ConfigError(errs)
    options = copy.deepcopy(raw.get("options", {}))
    if "obstacles" in options:
        try:
            [shape_from_dict(s) for s in options["obstacles"]]
        except MeshError as exc:
            raise ConfigError([("options.obstacles", str(exc))]) from exc
    return RunConfig(
        scenario=raw["scenario"],
        domain=_domain(raw["domain"]) if raw.get("domain") is not None else None,
        physics=_merge(DEFAULTS["physics"], raw.get("physics")),
        data=_merge(DEFAULTS["data"], raw.get("data")),
        probes=_merge(DEFAULTS["probes"], raw.get("probes")),
        solver=_merge(DEFAULTS["solver"], raw.get("solver")),
        options=options,
        output=_merge(DEFAULTS["output"], raw.get("output")),
        seed=int(raw.get("seed", DEFAULTS["seed"])),
        schema_version=raw["schema_version"],
    )


def parse_config(path) -> RunConfig:
    """Read and validate a JSON configuration file; raises :class:`ConfigError`."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError([("<file>", f"no such file: {path}")]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([("<file>", f"invalid JSON: {exc}")]) from exc
    return parse_dict(raw)


def serialize(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def write_config(path, config: RunConfig):
    with open(path, "w") as fh:
        fh.write(serialize(config))
    return path
