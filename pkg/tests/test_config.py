import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from signolab.config import (
    DEFAULTS,
    SCENARIOS,
    ConfigError,
    parse_config,
    parse_dict,
    serialize,
    validate,
    write_config,
)


def minimal(scenario="solve", **extra):
    raw = {
        "schema_version": 1,
        "scenario": scenario,
        "domain": {"outer": {"type": "circle", "radius": 1.0},
                   "obstacle": {"type": "circle", "radius": 0.3}, "mesh_h": 0.1},
    }
    raw.update(extra)
    return raw


def keys(raw):
    return [k for k, _ in validate(raw)]


def test_minimal_config_gets_defaults():
    cfg = parse_dict(minimal())
    assert cfg.solver == DEFAULTS["solver"]
    assert cfg.physics == {"kind": "scalar"}
    assert cfg.seed == 0
    assert cfg.lame == "scalar" and cfg.ndof == 1
    assert cfg.domain.measurement_arc == cfg.domain.control_arc


def test_negative_mesh_size_reported_by_path():
    raw = minimal()
    raw["domain"]["mesh_h"] = -0.1
    assert "domain.mesh_h" in keys(raw)


def test_elastic_needs_lame_parameters():
    assert "physics.mu" in keys(minimal(physics={"kind": "elastic", "lambda": 1.0}))
    cfg = parse_dict(minimal(physics={"kind": "elastic", "mu": 2.0, "lambda": 1.0}))
    assert cfg.lame.mu == 2.0 and cfg.ndof == 2


def test_unknown_keys_rejected():
    assert "<root>" in keys(minimal(colour="red"))
    raw = minimal()
    raw["domain"]["extra"] = 1
    assert "domain" in keys(raw)


def test_version_mismatch_reported_first():
    raw = minimal(schema_version=2, colour="red")
    assert keys(raw) == ["schema_version"]


def test_unknown_scenario():
    assert "scenario" in keys(minimal("bogus"))


@pytest.mark.parametrize("path,value", [
    ("control_arc", [0.6, 0.2]),
    ("measurement_arc", [-0.1, 0.5]),
])
def test_bad_domain_arcs(path, value):
    raw = minimal()
    raw["domain"][path] = value
    assert f"domain.{path}" in keys(raw)


def test_probe_arc_must_lie_in_control_arc():
    raw = minimal("dtn", probes={"arc": [0.4, 0.8]})
    raw["domain"]["control_arc"] = [0.0, 0.5]
    assert "probes.arc" in keys(raw)


def test_obstacle_required_where_needed():
    raw = minimal("dtn")
    del raw["domain"]["obstacle"]
    assert "domain.obstacle" in keys(raw)
    raw = minimal("rigidity")
    del raw["domain"]["obstacle"]
    assert validate(raw) == []


def test_domain_required_where_needed():
    raw = minimal("solve")
    del raw["domain"]
    assert "domain" in keys(raw)
    assert validate({"schema_version": 1, "scenario": "convergence"}) == []


def test_config_error_carries_violations():
    with pytest.raises(ConfigError) as info:
        parse_dict(minimal(colour="red"))
    assert info.value.violations[0][0] == "<root>"


_scenario = st.sampled_from([s for s in SCENARIOS if s not in ("counterexample-fundamental", "convergence",
                                                               "mesh-validate")])


@given(_scenario, st.floats(0.02, 0.3), st.floats(0.1, 0.5), st.integers(0, 2**31),
       st.booleans(), st.floats(-1, 1, allow_nan=False))
def test_round_trip(scenario, h, r, seed, elastic, phi):
    raw = minimal(scenario, seed=seed, data={"obstacle_function": phi})
    raw["domain"]["mesh_h"] = h
    raw["domain"]["obstacle"]["radius"] = r
    if elastic:
        raw["physics"] = {"kind": "elastic", "mu": 1.0, "lambda": 2.0}
    cfg = parse_dict(raw)
    assert parse_dict(json.loads(serialize(cfg))) == cfg


def test_parse_config_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(minimal()))
    cfg = parse_config(p)
    write_config(tmp_path / "d.json", cfg)
    assert parse_config(tmp_path / "d.json") == cfg


def test_parse_config_missing_and_invalid(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "none.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError) as info:
        parse_config(p)
    assert info.value.violations[0][0] == "<file>"
