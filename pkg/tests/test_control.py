import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from signolab.control import (
    ControlError,
    ControlOperator,
    IllConditionedWarning,
    certify_clearance,
    find_control,
    normal_trace,
    recompute_residual,
    residual_curve,
    strict_majorant_control,
)
from signolab.dtn import ProbeBasis
from signolab.functions import as_nodal, fourier
from signolab.zaremba import ZarembaProblem, solve_zaremba

from conftest import LAME, annulus

HALF = (0.0, 0.5)


@pytest.fixture(scope="module")
def half():
    return annulus(0.1, control_arc=HALF)


def test_constant_target_full_boundary(coarse):
    r = find_control(coarse, "scalar", 1.0, ProbeBasis(), 1e-12)
    assert r.residual <= 1e-10
    np.testing.assert_allclose(r.control, 1.0, atol=1e-9)


@pytest.mark.parametrize("alpha", [1e-6, 1e-8, 1e-10])
def test_reachable_target_residual_scales_with_alpha(half, alpha):
    b = ProbeBasis(HALF, 12)
    op = ControlOperator(half, "scalar", b)
    c0 = np.linspace(1.0, -0.5, 12)
    target = op.T @ c0
    r = find_control(half, "scalar", target, b, alpha, op)
    assert r.residual <= 10 * alpha ** 0.5


def test_alpha_curve_is_monotone(half):
    target = fourier(0.2, [0.0, 0.05], [0.1], target="obstacle")
    curve = residual_curve(half, "scalar", target, ProbeBasis(HALF, 12), [10.0 ** -k for k in range(2, 9)])
    res = [c.residual for c in curve]
    assert all(b <= a + 1e-12 for a, b in zip(res, res[1:]))
    assert [c.alpha for c in curve] == sorted((c.alpha for c in curve), reverse=True)


@given(n=st.integers(2, 10), extra=st.integers(1, 6), alpha=st.sampled_from([1e-4, 1e-6, 1e-8]))
def test_objective_monotone_in_basis_size(half, n, extra, alpha):
    target = fourier(0.1, [0.2], [0.0, 0.1], target="obstacle")
    small = find_control(half, "scalar", target, ProbeBasis(HALF, n), alpha)
    large = find_control(half, "scalar", target, ProbeBasis(HALF, n + extra), alpha)
    assert large.objective <= small.objective * (1 + 1e-10) + 1e-12


def test_unregularized_residual_monotone_in_basis_size(half):
    target = as_nodal(fourier(0.1, [0.2], [0.0, 0.1], target="obstacle"), half, "obstacle")
    prev = np.inf
    for n in (2, 4, 6, 8, 10, 12):
        op = ControlOperator(half, "scalar", ProbeBasis(HALF, n))
        c, *_ = np.linalg.lstsq(op.L_O @ op.T, op.L_O @ target, rcond=None)
        r = np.linalg.norm(op.L_O @ (op.T @ c - target))
        assert r <= prev + 1e-12
        prev = r


@pytest.mark.parametrize("physics", ["scalar", LAME])
def test_achieved_trace_matches_independent_mixed_solve(half, physics):
    ndof = 1 if physics == "scalar" else 2
    target = 0.3 if ndof == 1 else np.tile([0.1, -0.05], (len(half.boundary_nodes("obstacle")), 1))
    r = find_control(half, physics, target, ProbeBasis(HALF, 8, ndof), 1e-6)
    u = solve_zaremba(ZarembaProblem(half, physics, r.control, None))
    tr = u[half.boundary_nodes("obstacle")]
    assert np.abs(tr - r.achieved).max() <= 1e-12 * max(1.0, np.abs(u).max())
    assert recompute_residual(half, r) == pytest.approx(r.residual, rel=1e-12)


def test_majorant_scalar_negative_obstacle(half):
    r = strict_majorant_control(half, "scalar", -1.0, 0.5, ProbeBasis(HALF, 12))
    assert (r.clearance > 0).all()
    ok, margins = certify_clearance(half, "scalar", r.achieved, -np.ones(len(r.achieved)))
    assert ok and np.allclose(margins, r.clearance)
    # the approximation error only has to stay below the clearance delta
    assert r.residual_max < 0.5


def test_majorant_zero_obstacle_full_boundary(coarse):
    r = strict_majorant_control(coarse, "scalar", 0.0, 1.0, ProbeBasis(), alpha=1e-12)
    np.testing.assert_allclose(r.control, 1.0, atol=1e-8)


def test_majorant_elastic(half):
    phi = fourier(0.2, [0.05], target="obstacle")
    r = strict_majorant_control(half, LAME, phi, 0.1, ProbeBasis(HALF, 12, 2))
    un = normal_trace(half, r.achieved)
    assert (un < as_nodal(phi, half, "obstacle")).all()


def test_majorant_perturbation_stays_within_half_delta(half):
    base = strict_majorant_control(half, "scalar", -1.0, 0.5, ProbeBasis(HALF, 12))
    pert = strict_majorant_control(half, "scalar", -1.0, 0.5, ProbeBasis(HALF, 12), perturbation=3)
    assert np.abs(pert.achieved - base.achieved).max() <= 0.25 + 1e-12
    assert (pert.clearance > 0).all()


def test_majorant_failure_is_reported(half):
    with pytest.raises(ControlError):
        strict_majorant_control(half, "scalar", fourier(0.0, [2.0], target="obstacle"), 1e-3,
                                ProbeBasis(HALF, 2), alpha=1.0)


def test_ill_conditioning_warns(half):
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        find_control(half, "scalar", 0.3, ProbeBasis(HALF, 24), 1e-16)
    assert any(issubclass(x.category, IllConditionedWarning) for x in w)


def test_alpha_must_be_positive(half):
    with pytest.raises(ValueError):
        find_control(half, "scalar", 0.3, ProbeBasis(HALF, 4), 0.0)


def test_write_csv(tmp_path, half):
    r = find_control(half, "scalar", 0.3, ProbeBasis(HALF, 4), 1e-4)
    paths = r.write_csv(str(tmp_path / "ctl"))
    coef = np.loadtxt(paths[0], delimiter=",", skiprows=1)
    np.testing.assert_array_equal(coef[:, 1], r.coefficients)
    tr = np.loadtxt(paths[1], delimiter=",", skiprows=1)
    np.testing.assert_array_equal(tr[:, 1], r.achieved)
