import numpy as np
import pytest
from hypothesis import given, strategies as st

from signolab.assembly import assemble_stiffness
from signolab.experiments import fem_errors, observed_rates
from signolab.functions import closed_form, harmonic_polynomial, harmonic_polynomial_gradient
from signolab.zaremba import (
    ZarembaProblem,
    boundary_flux,
    green_scale,
    read_field,
    solve_zaremba,
    verify_green_identity,
    write_field,
)

from conftest import LAME, annulus

# sup-norm of the discrete solution operator (f, g, psi) -> u on the h = 0.1 annulus,
# computed column by column from unit data
STABILITY_CONSTANT = 1.534408708732712


def x2y2_problem(mesh):
    grad = lambda x: harmonic_polynomial_gradient(x, 2, "re")
    g = lambda x, n: (grad(x) * n).sum(axis=1)
    return ZarembaProblem(mesh, "scalar", closed_form("harmonic_polynomial", degree=2), g)


def random_problem(mesh, rng, physics="scalar"):
    ndof = 1 if physics == "scalar" else 2
    no, nb = len(mesh.boundary_nodes("outer")), len(mesh.boundary_nodes("obstacle"))
    shape = (lambda n: (n,)) if ndof == 1 else (lambda n: (n, 2))
    return ZarembaProblem(mesh, physics, rng.standard_normal(shape(no)), rng.standard_normal(shape(nb)))


def test_constant_data_gives_constant(coarse):
    u = solve_zaremba(ZarembaProblem(coarse, "scalar", 2.5, 0.0))
    np.testing.assert_allclose(u, 2.5, atol=1e-12)
    for tag in ("outer", "obstacle", "OUTER_S"):
        assert np.abs(boundary_flux(ZarembaProblem(coarse, "scalar", 2.5), u, tag)).max() <= 1e-10


def test_manufactured_harmonic_rate():
    hs, errs = [0.1, 0.05], []
    for h in hs:
        m = annulus(h)
        u = solve_zaremba(x2y2_problem(m))
        e1, _ = fem_errors(m, u, lambda x: harmonic_polynomial(x, 2), lambda x: harmonic_polynomial_gradient(x, 2))
        errs.append(e1)
    assert 0.8 <= observed_rates(hs, errs)[0] <= 1.2


def test_outer_flux_of_x2y2():
    for h in (0.1, 0.05):
        m = annulus(h)
        prob = x2y2_problem(m)
        q = boundary_flux(prob, solve_zaremba(prob), "outer")
        x = m.nodes[m.boundary_nodes("outer")]
        theta = np.arctan2(x[:, 1], x[:, 0])
        assert np.abs(q - 2 * np.cos(2 * theta)).max() <= 2.0 * h


def test_green_identity_random_pairs(coarse, rng):
    for physics in ("scalar", LAME):
        for _ in range(10):
            u = solve_zaremba(random_problem(coarse, rng, physics))
            v = solve_zaremba(random_problem(coarse, rng, physics))
            assert verify_green_identity(coarse, physics, u, v) <= 1e-10 * green_scale(coarse, physics, u, v)


def test_green_identity_u_equals_v(coarse, rng):
    u = solve_zaremba(random_problem(coarse, rng))
    assert verify_green_identity(coarse, "scalar", u, u) == 0.0


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_linearity(coarse, a, b, seed):
    rng = np.random.default_rng(seed)
    p1, p2 = random_problem(coarse, rng), random_problem(coarse, rng)
    u1, u2 = solve_zaremba(p1), solve_zaremba(p2)
    mix = ZarembaProblem(coarse, "scalar", a * p1.dirichlet + b * p2.dirichlet, a * p1.neumann + b * p2.neumann)
    u = solve_zaremba(mix)
    ref = a * u1 + b * u2
    assert np.abs(u - ref).max() <= 1e-12 * max(1.0, np.abs(ref).max())


def test_solves_are_bit_identical(coarse, rng):
    p = random_problem(coarse, rng, LAME)
    np.testing.assert_array_equal(solve_zaremba(p), solve_zaremba(p))


def test_max_norm_stability(coarse, rng):
    no, nb = len(coarse.boundary_nodes("outer")), len(coarse.boundary_nodes("obstacle"))
    for _ in range(20):
        f, g, psi = rng.uniform(-1, 1, no), rng.uniform(-1, 1, nb), rng.uniform(-1, 1, coarse.n_nodes)
        u = solve_zaremba(ZarembaProblem(coarse, "scalar", f, g, psi))
        bound = np.abs(f).max() + np.abs(g).max() + np.abs(psi).max()
        assert np.abs(u).max() <= STABILITY_CONSTANT * bound * (1 + 1e-12)
    # worst case: data with the sign pattern of the row of maximal absolute sum
    cols = []
    for n, kind in ((no, "f"), (nb, "g"), (coarse.n_nodes, "psi")):
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            args = {"f": 0.0, "g": None, "psi": None}
            args[kind] = e
            cols.append(solve_zaremba(ZarembaProblem(coarse, "scalar", args["f"], args["g"], args["psi"])))
    S = np.array(cols).T
    assert np.abs(S[:, :no]).sum(axis=1).max() == pytest.approx(1.0, abs=1e-12)
    assert np.abs(S).sum(axis=1).max() == pytest.approx(STABILITY_CONSTANT, rel=1e-9)


def test_elastic_rigid_motion_data_reproduced(coarse):
    from signolab.functions import rigid_motion

    u = solve_zaremba(ZarembaProblem(coarse, LAME, lambda x: rigid_motion(x, 0.3, (0.1, -0.2))))
    np.testing.assert_allclose(u, rigid_motion(coarse.nodes, 0.3, (0.1, -0.2)), atol=1e-12)
    K = assemble_stiffness(coarse, LAME)
    assert abs(u.ravel() @ (K @ u.ravel())) <= 1e-10 * abs(K).max()


def test_field_round_trip(tmp_path, coarse, rng):
    for physics in ("scalar", LAME):
        u = solve_zaremba(random_problem(coarse, rng, physics))
        write_field(tmp_path / "u.txt", u)
        np.testing.assert_array_equal(read_field(tmp_path / "u.txt"), u)


def test_neumann_target_checked(coarse):
    with pytest.raises(ValueError):
        ZarembaProblem(coarse, "scalar", 0.0, closed_form("constant", "outer", value=1.0))
