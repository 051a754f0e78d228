import csv
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from signolab.dtn import ProbeBasis
from signolab.experiments import (
    Configuration,
    ScenarioReport,
    fem_errors,
    fit_rigid_motion,
    observed_rates,
    resample,
    run_bounded_probe_counterexample,
    run_convergence_study,
    run_fundamental_counterexample,
    run_obstacle_function_discrimination,
    run_shape_discrimination,
    run_solve,
)
from signolab.functions import closed_form, fourier
from signolab.geometry import Circle, DomainSpec, refine_mesh


def test_fem_errors_vanish_for_linear_field(tiny):
    x = tiny.nodes
    u = 2.0 * x[:, 0] - 0.5 * x[:, 1] + 1.0
    e1, e0 = fem_errors(tiny, u, lambda p: 2.0 * p[:, 0] - 0.5 * p[:, 1] + 1.0,
                        lambda p: np.tile([2.0, -0.5], (len(p), 1)))
    assert e1 < 1e-12 and e0 < 1e-12


def test_fem_errors_of_constant_offset(tiny):
    # u_h = exact + 1 has zero gradient error and L2 error sqrt(area)
    e1, e0 = fem_errors(tiny, np.ones(tiny.n_nodes), lambda p: np.zeros(len(p)), lambda p: np.zeros((len(p), 2)))
    area = np.pi * (1.0 - 0.3**2)
    assert e1 < 1e-12
    assert e0 == pytest.approx(np.sqrt(area), rel=0.02)


@given(st.floats(0.5, 3.0), st.floats(0.1, 1.0))
def test_observed_rates_recover_power_law(p, c):
    hs = np.array([0.1, 0.05, 0.025])
    r = observed_rates(hs, c * hs**p)
    assert np.allclose(r, p)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_fit_rigid_motion_recovers_parameters(w, a, b):
    pts = np.random.default_rng(0).uniform(-1, 1, (30, 2))
    field = np.column_stack([-w * pts[:, 1] + a, w * pts[:, 0] + b])
    params, res = fit_rigid_motion(pts, field)
    assert np.allclose(params, [w, a, b], atol=1e-10)
    assert res < 1e-10


def test_resample_exact_at_shared_nodes(tiny):
    fine = refine_mesh(tiny)
    t = fine.node_param[fine.boundary_nodes("outer")]
    v = np.sin(2 * np.pi * t)
    back = resample(fine, v, tiny)
    t0 = tiny.node_param[tiny.boundary_nodes("outer")]
    assert np.allclose(back, np.sin(2 * np.pi * t0), atol=1e-12)


def test_report_write_and_text(tmp_path):
    rep = ScenarioReport("demo", {"a": 1})
    rep.check("x", 0.5, "<=", 1.0)
    rep.info("y", 3.0)
    rep.tables["flux"] = (["t", "v"], [[0.0, 1.0], [0.5, 2.0]])
    paths = rep.write(str(tmp_path), figures=False)
    assert {os.path.basename(p) for p in paths} == {"report.txt", "metrics.csv", "flux.csv"}
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["name"] == "x" and rows[0]["pass"] == "1"
    assert "result: PASS" in rep.to_text()
    rep.check("z", 2.0, "<", 1.0)
    assert not rep.passed and "FAIL" in rep.to_text()


def test_report_figures_written(tmp_path):
    rep = ScenarioReport("demo", {})
    rep.tables["convergence"] = (["h", "h1_error"], [[0.1, 0.2], [0.05, 0.1]])
    paths = rep.write(str(tmp_path), figures=True)
    assert any(p.endswith("convergence.png") for p in paths)


def test_solve_report_is_deterministic():
    spec = DomainSpec(Circle((0, 0), 1.0), Circle((0, 0), 0.3), 0.2)
    f = closed_form("harmonic_polynomial", degree=1)
    a = run_solve(spec, "scalar", f, 0.0, seed=3)[0]
    b = run_solve(spec, "scalar", f, 0.0, seed=3)[0]
    assert a.to_text() == b.to_text()
    assert a.passed
    assert a.row("seed").value == 3


def test_fundamental_single_obstacle_is_degenerate():
    rep = run_fundamental_counterexample(Circle((0, 0), 1.0), (0.3, 0.0), [Circle((0.3, 0.0), 0.15)], 0.1, levels=2)
    assert rep.passed
    assert any("single obstacle" in n for n in rep.notes)
    with pytest.raises(KeyError):
        rep.row("flux_disagreement")


def test_fundamental_rejects_pole_outside_obstacle():
    with pytest.raises(ValueError, match="does not contain"):
        run_fundamental_counterexample(Circle((0, 0), 1.0), (0.3, 0.0), [Circle((-0.3, 0.0), 0.1)], 0.1)


def test_fundamental_rejects_pole_near_center():
    with pytest.raises(ValueError, match="outer center"):
        run_fundamental_counterexample(Circle((0, 0), 1.0), (0.05, 0.0), [Circle((0.0, 0.0), 0.2)], 0.1)


def test_convergence_single_h_has_no_rates():
    rep = run_convergence_study("scalar-harmonic", [0.2])
    assert not [r for r in rep.rows if "rate" in r.name]
    assert any("single mesh size" in n for n in rep.notes)


def test_convergence_unknown_case():
    with pytest.raises(ValueError):
        run_convergence_study("nope", [0.1])


def test_bounded_probes_reachable_is_skipped():
    spec = DomainSpec(Circle((0, 0), 1.0), Circle((0, 0), 0.3), 0.2)
    rep = run_bounded_probe_counterexample(spec, ProbeBasis(count=4, bound=1.0), margin=-1.0)
    assert rep.passed
    assert any("outside the hypothesis" in n for n in rep.notes)
    assert rep.row("max_contact_size").op == "info"


def test_bounded_probes_need_bound():
    spec = DomainSpec(Circle((0, 0), 1.0), Circle((0, 0), 0.3), 0.2)
    with pytest.raises(ValueError):
        run_bounded_probe_counterexample(spec, ProbeBasis(count=4))


def test_identical_configurations_sit_at_floor():
    spec = DomainSpec(Circle((0, 0), 1.0), Circle((0.1, 0), 0.3), 0.2)
    cfg = Configuration(spec, -0.1)
    rep = run_shape_discrimination(cfg, cfg, ProbeBasis(count=6))
    assert rep.passed
    assert rep.row("separation_weighted_rel").value == 0.0
    assert any("indistinguishable" in n for n in rep.notes)


def test_shape_discrimination_needs_common_outer():
    a = Configuration(DomainSpec(Circle((0, 0), 1.0), Circle((0, 0), 0.3), 0.2))
    b = Configuration(DomainSpec(Circle((0, 0), 1.2), Circle((0, 0), 0.3), 0.2))
    with pytest.raises(ValueError):
        run_shape_discrimination(a, b, ProbeBasis(count=4))


def test_obstacle_function_identical_phi():
    spec = DomainSpec(Circle((0, 0), 1.0), Circle((0, 0), 0.4), 0.2)
    bump = closed_form("arc_bump", "obstacle", arc=[0.0, 1 / 6], amplitude=0.3, base=-0.2)
    rep = run_obstacle_function_discrimination(spec, bump, bump, (0.0, 1 / 6), ProbeBasis(count=4))
    assert rep.row("difference_weighted_rel").value == 0.0


def test_solve_reports_junction_residuals_apart():
    spec = DomainSpec(Circle((0, 0), 1.0), Circle((0, 0), 0.3), 0.1)
    rep = run_solve(spec, "scalar", fourier(0.0, [0.4]), -0.05, neumann_arc=(0.1, 0.35))[0]
    assert rep.passed
    for name in ("junction_complementarity", "neumann_arc_flux_residual", "junction_neighbour_flux_residual"):
        assert rep.row(name).op == "info" and rep.row(name).value <= 1e-10
