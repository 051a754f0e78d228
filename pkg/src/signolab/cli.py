"""
Command line entry point.

    signolab solve --config run.json --out results/
    signolab counterexample fundamental --h 0.05
    signolab discriminate shape --config shapes.json
    signolab run --config any.json

Every run writes its report, metric table, data tables and serialized
mesh/solution/DtN files under ``--out`` together with ``manifest.json``,
which lists each written file with its SHA-256 digest.

Exit codes: 0 pass, 1 scenario fail, 2 configuration error,
3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys

from . import __version__
from .config import SCHEMA_VERSION, SCENARIOS, ConfigError, RunConfig, data_value, parse_dict, serialize
from .geometry import MeshError

log = logging.getLogger("signolab")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

_ANNULUS = {
    "outer": {"type": "circle", "center": [0.0, 0.0], "radius": 1.0},
    "obstacle": {"type": "circle", "center": [0.0, 0.0], "radius": 0.3},
    "mesh_h": 0.1,
}

# built-in configuration used when --config is not given
DEFAULT_CONFIGS = {
    "solve": {"domain": _ANNULUS, "data": {
        "dirichlet": {"kind": "closed_form", "params": {"name": "harmonic_polynomial", "degree": 1}},
        "obstacle_function": 0.0}},
    "dtn": {"domain": _ANNULUS, "data": {"obstacle_function": -0.2}},
    "control": {"domain": dict(_ANNULUS, control_arc=[0.0, 0.5]), "data": {
        "obstacle_function": {"kind": "fourier", "params": {"a0": 0.2, "a": [0.0, 0.05], "b": [0.1]}}},
        "solver": {"residual_target": 0.05}},
    "counterexample-fundamental": {"options": {
        "z": [0.3, 0.0], "levels": 3,
        "obstacles": [{"type": "circle", "center": [0.3, 0.0], "radius": 0.15},
                      {"type": "square", "center": [0.3, 0.0], "side": 0.2},
                      {"type": "ellipse", "center": [0.3, 0.0], "semi_axes": [0.2, 0.12]}]},
        "domain": {"outer": {"type": "circle", "radius": 1.0}, "mesh_h": 0.05}},
    "counterexample-bounded-probes": {"domain": dict(_ANNULUS, mesh_h=0.05), "probes": {"bound": 1.0},
                                      "options": {"margin": 2.0}},
    "rigidity": {"domain": {"outer": {"type": "circle", "radius": 1.0}, "mesh_h": 0.1}, "data": {
        "obstacle_function": {"kind": "closed_form", "params": {"name": "harmonic_polynomial", "degree": 1}}}},
    "discriminate-shape": {"domain": dict(_ANNULUS, mesh_h=0.05), "data": {"obstacle_function": -0.2},
                           "options": {"compare_domain": dict(_ANNULUS, mesh_h=0.05, obstacle={
                               "type": "circle", "center": [0.1, 0.0], "radius": 0.3})}},
    "discriminate-obstacle-function": {
        "domain": dict(_ANNULUS, mesh_h=0.05, obstacle={"type": "circle", "center": [0.0, 0.0], "radius": 0.4}),
        "data": {"obstacle_function": -0.2},
        "solver": {"alphas": [1e-4]},
        "options": {"difference_arc": [0.0, 1.0 / 6.0], "compare_obstacle_function": {
            "kind": "closed_form", "target": "obstacle",
            "params": {"name": "arc_bump", "arc": [0.0, 1.0 / 6.0], "amplitude": 0.3, "base": -0.2}}}},
    "convergence": {"options": {"case": "scalar-harmonic", "hs": [0.1, 0.05, 0.025]}},
    "mesh-build": {"domain": _ANNULUS},
    "mesh-validate": {"domain": _ANNULUS},
}


def default_config(scenario):
    raw = {"schema_version": SCHEMA_VERSION, "scenario": scenario}
    raw.update(copy.deepcopy(DEFAULT_CONFIGS[scenario]))
    return raw


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, paths, extra=None):
    """Write ``manifest.json`` listing every path with its size and digest."""
    entries = []
    for p in sorted(set(paths)):
        entries.append({"path": os.path.relpath(p, outdir), "sha256": sha256_file(p), "bytes": os.path.getsize(p)})
    doc = {"signolab_version": __version__, "files": entries}
    doc.update(extra or {})
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# scenario dispatch


def _basis(cfg: RunConfig, arc=None):
    from .dtn import ProbeBasis

    p = cfg.probes
    a = p["arc"] or arc or (cfg.domain.control_arc if cfg.domain is not None else (0.0, 1.0))
    return ProbeBasis(tuple(a), p["count"], cfg.ndof, p["bound"])


def _phi(cfg, key="obstacle_function"):
    return cfg.boundary_data(key, "obstacle")


def _run_scenario(cfg: RunConfig, outdir):
    """Run one scenario; returns (report, extra written paths)."""
    from . import experiments as ex
    from .geometry import build_annular_mesh, read_mesh, validate_mesh, write_mesh
    from .signorini import write_solution

    s, sv, opt = cfg.scenario, cfg.solver, cfg.options
    extra = []

    def mesh_out(mesh):
        p = os.path.join(outdir, "mesh.txt")
        write_mesh(p, mesh)
        extra.append(p)

    if s == "solve":
        rep, mesh, sol = ex.run_solve(cfg.domain, cfg.lame, cfg.boundary_data("dirichlet", "outer"), _phi(cfg),
                                      cfg.data["neumann_arc"], sv["max_iters"], sv["tol"], seed=cfg.seed)
        mesh_out(mesh)
        p = os.path.join(outdir, "solution.txt")
        write_solution(p, sol)
        extra.append(p)
    elif s == "dtn":
        rep, mesh, D = ex.run_dtn(cfg.domain, cfg.lame, _phi(cfg), _basis(cfg), cfg.data["neumann_arc"])
        mesh_out(mesh)
        p = os.path.join(outdir, "dtn.csv")
        D.to_csv(p)
        extra.append(p)
    elif s == "control":
        rep, mesh, curve = ex.run_control(cfg.domain, cfg.lame, _phi(cfg), sv["delta"], _basis(cfg), sv["alphas"],
                                          sv["residual_target"])
        mesh_out(mesh)
        extra.extend(curve[-1].write_csv(os.path.join(outdir, "control")))
    elif s == "counterexample-fundamental":
        from .geometry import shape_from_dict

        outer = shape_from_dict(cfg.domain.to_dict()["outer"]) if cfg.domain else None
        if outer is None:
            from .geometry import Circle

            outer = Circle((0.0, 0.0), 1.0)
        h = cfg.domain.mesh_h if cfg.domain else 0.05
        rep = ex.run_fundamental_counterexample(outer, tuple(opt.get("z", (0.3, 0.0))),
                                                [shape_from_dict(o) for o in opt["obstacles"]], h,
                                                opt.get("levels", 3))
    elif s == "counterexample-bounded-probes":
        rep = ex.run_bounded_probe_counterexample(cfg.domain, _basis(cfg), cfg.lame, opt.get("margin", 2.0))
    elif s == "rigidity":
        # the whole (single) boundary carries the constraint
        rep = ex.run_rigidity_check(cfg.domain.outer, cfg.lame, cfg.boundary_data("obstacle_function", "outer"),
                                    cfg.domain.mesh_h)
    elif s == "discriminate-shape":
        from .geometry import DomainSpec

        other = dict(opt["compare_domain"])
        other.setdefault("control_arc", list(cfg.domain.control_arc))
        other.setdefault("measurement_arc", list(cfg.domain.measurement))
        cb = DomainSpec.from_dict(other)
        phi_b = data_value(cfg.options.get("compare_obstacle_function", cfg.data["obstacle_function"]), "obstacle")
        rep = ex.run_shape_discrimination(ex.Configuration(cfg.domain, _phi(cfg)), ex.Configuration(cb, phi_b),
                                          _basis(cfg), cfg.lame, sv["separation_factor"])
    elif s == "discriminate-obstacle-function":
        phi2 = data_value(opt.get("compare_obstacle_function", cfg.data["obstacle_function"]), "obstacle")
        arc = opt.get("difference_arc")
        rep = ex.run_obstacle_function_discrimination(cfg.domain, _phi(cfg), phi2, None if arc is None else tuple(arc),
                                                      _basis(cfg), cfg.lame, alpha=min(sv["alphas"]),
                                                      delta=sv["delta"], bound=cfg.probes["bound"],
                                                      factor=sv["separation_factor"])
    elif s == "convergence":
        phys = cfg.physics
        rep = ex.run_convergence_study(opt.get("case", "scalar-harmonic"), opt.get("hs", [0.1, 0.05, 0.025]),
                                       phys.get("mu", 1.0), phys.get("lambda", 1.0))
    elif s == "mesh-build":
        mesh = build_annular_mesh(cfg.domain)
        rep = ex.ScenarioReport("mesh-build", {"domain": cfg.domain.to_dict()})
        problems = validate_mesh(mesh)
        rep.check("violations", len(problems), "==", 0)
        rep.info("nodes", mesh.n_nodes)
        rep.info("triangles", len(mesh.triangles))
        rep.notes.extend(problems)
        mesh_out(mesh)
    elif s == "mesh-validate":
        if "mesh_path" in opt:
            mesh = read_mesh(opt["mesh_path"])
            inputs = {"mesh_path": opt["mesh_path"], "mesh_digest": mesh.digest()}
        else:
            mesh = build_annular_mesh(cfg.domain)
            inputs = {"domain": cfg.domain.to_dict()}
        rep = ex.ScenarioReport("mesh-validate", inputs)
        problems = validate_mesh(mesh)
        rep.check("violations", len(problems), "==", 0)
        rep.notes.extend(problems)
    else:  # pragma: no cover - the schema rejects unknown ids
        raise ConfigError([("scenario", f"unknown scenario {s!r}")])
    return rep, extra


def run(cfg: RunConfig, outdir=None, figures=None):
    """Run a validated configuration, write all artifacts and the manifest; return the exit code."""
    from .signorini import SignoriniConvergenceError

    outdir = outdir or cfg.output["dir"]
    figures = cfg.output["figures"] if figures is None else figures
    os.makedirs(outdir, exist_ok=True)
    cfg_path = os.path.join(outdir, "config.json")
    with open(cfg_path, "w") as fh:
        fh.write(serialize(cfg))
    written = [cfg_path]
    try:
        rep, extra = _run_scenario(cfg, outdir)
    except SignoriniConvergenceError as exc:
        p = os.path.join(outdir, "error.txt")
        with open(p, "w") as fh:
            fh.write(f"solver did not converge: {exc}\ncycle: {exc.cycle}\n")
        written.append(p)
        write_manifest(outdir, written, {"scenario": cfg.scenario, "seed": cfg.seed, "exit_code": EXIT_SOLVER})
        log.error("solver did not converge: %s", exc)
        return EXIT_SOLVER
    written += extra
    written += rep.write(outdir, figures=figures)
    code = EXIT_PASS if rep.passed else EXIT_FAIL
    write_manifest(outdir, written, {"scenario": cfg.scenario, "seed": cfg.seed, "exit_code": code,
                                     "inputs_digest": rep.inputs_digest})
    sys.stdout.write(rep.to_text())
    return code


# ---------------------------------------------------------------------------
# argument parsing

_GROUPS = {
    "counterexample": {"fundamental": "counterexample-fundamental", "bounded-probes": "counterexample-bounded-probes"},
    "discriminate": {"shape": "discriminate-shape", "obstacle-function": "discriminate-obstacle-function"},
    "mesh": {"build": "mesh-build", "validate": "mesh-validate"},
}


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON run configuration (built-in example if omitted)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    p.add_argument("--h", type=float, metavar="OVERRIDE", help="override domain.mesh_h")
    p.add_argument("--seed", type=int, help="seed for random feasible-perturbation checks (default 0)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def build_parser():
    ap = argparse.ArgumentParser(prog="signolab", description="Signorini obstacle laboratory")
    ap.add_argument("--version", action="version", version=f"signolab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    for name in ("solve", "dtn", "control", "rigidity", "convergence"):
        _common(sub.add_parser(name, help=f"run the {name} scenario"))
    for group, kinds in _GROUPS.items():
        g = sub.add_parser(group, help=f"{group} scenarios").add_subparsers(dest="kind", metavar="KIND")
        for k in kinds:
            _common(g.add_parser(k))
    p = sub.add_parser("run", help="run the scenario named in a configuration")
    _common(p)
    sub.add_parser("scenarios", help="list scenario ids")
    sub.add_parser("schema", help="print the configuration JSON schema")
    return ap


def _scenario_of(args):
    if args.command in _GROUPS:
        return _GROUPS[args.command].get(args.kind)
    return None if args.command == "run" else args.command


def _load(args, scenario):
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError([("<root>", "configuration must be a JSON object")])
        if scenario is not None and raw.get("scenario") != scenario:
            raise ConfigError([("scenario", f"config is for {raw.get('scenario')!r}, command runs {scenario!r}")])
    elif scenario is None:
        raise ConfigError([("--config", "the run command needs --config")])
    else:
        raw = default_config(scenario)
    if args.h is not None:
        raw.setdefault("domain", {"outer": {"type": "circle", "radius": 1.0}, "mesh_h": args.h})["mesh_h"] = args.h
        if raw["scenario"] == "convergence":
            raw.setdefault("options", {})["hs"] = [args.h, args.h / 2, args.h / 4]
    if args.seed is not None:
        raw["seed"] = args.seed
    return parse_dict(raw)


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command is None:
        ap.print_help(sys.stderr)
        return EXIT_CONFIG
    if args.command == "scenarios":
        print("\n".join(SCENARIOS))
        return EXIT_PASS
    if args.command == "schema":
        from .config import SCHEMA

        print(json.dumps(SCHEMA, indent=2))
        return EXIT_PASS
    if args.command in _GROUPS and args.kind is None:
        sys.stderr.write(f"signolab {args.command}: choose one of {', '.join(_GROUPS[args.command])}\n")
        return EXIT_CONFIG
    try:
        cfg = _load(args, _scenario_of(args))
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        _config_error(exc)
        return EXIT_CONFIG
    try:
        return run(cfg, args.out, False if args.no_figures else None)
    except (ConfigError, MeshError, ValueError) as exc:
        _config_error(exc)
        return EXIT_CONFIG


def _config_error(exc):
    if isinstance(exc, ConfigError):
        for k, m in exc.violations:
            sys.stderr.write(f"config error at {k}: {m}\n")
    else:
        sys.stderr.write(f"config error: {exc}\n")
    sys.stderr.write(f"valid scenarios: {', '.join(SCENARIOS)}; see 'signolab schema'\n")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
