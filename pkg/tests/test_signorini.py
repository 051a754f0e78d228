import numpy as np
import pytest
from hypothesis import given, strategies as st

from signolab.assembly import LameParameters, assemble_stiffness
from signolab.functions import closed_form, fourier, nodal, rigid_motion
from signolab.geometry import Circle, DomainSpec, build_annular_mesh
from signolab.oracles import qp_oracle
from signolab.signorini import (
    RigidityError,
    SignoriniConvergenceError,
    SignoriniProblem,
    check_complementarity,
    energy,
    feasible_perturbations,
    read_solution,
    solve_full_signorini_rigidity,
    solve_signorini,
    write_solution,
)

from conftest import LAME, annulus, kkt_fixtures

FIXTURES = kkt_fixtures()


def _scale(sol):
    return max(1.0, np.abs(sol.phi).max(initial=0.0), np.abs(sol.field).max())


@pytest.mark.parametrize("name,problem", FIXTURES, ids=[n for n, _ in FIXTURES])
def test_kkt_invariants(name, problem):
    sol = solve_signorini(problem)
    rep = check_complementarity(sol, problem, 1e-8 * _scale(sol))
    assert rep.ok, rep.violations()[:5]
    assert sol.iterations <= 50
    assert sol.complementarity_residual <= 1e-8 * _scale(sol)


@pytest.mark.parametrize("name,problem", FIXTURES, ids=[n for n, _ in FIXTURES])
def test_energy_optimality_against_feasible_perturbations(name, problem):
    sol = solve_signorini(problem)
    inc = feasible_perturbations(sol, problem, np.random.default_rng(0), count=100, eps=1e-2)
    assert inc.min() >= -1e-12 * max(1.0, energy(sol.field, problem))


def test_constant_datum_above_obstacle(coarse):
    sol = solve_signorini(SignoriniProblem(coarse, "scalar", 1.0, 0.0))
    np.testing.assert_allclose(sol.field, 1.0, atol=1e-12)
    assert sol.contact_size == 0
    np.testing.assert_allclose(sol.multiplier, 0.0, atol=1e-10)


def test_zero_datum_is_biactive(coarse):
    sol = solve_signorini(SignoriniProblem(coarse, "scalar", 0.0, 0.0))
    np.testing.assert_allclose(sol.field, 0.0, atol=1e-14)
    np.testing.assert_allclose(sol.gap, 0.0, atol=1e-14)
    np.testing.assert_allclose(sol.multiplier, 0.0, atol=1e-12)


def test_fundamental_solution_full_contact():
    z = (0.3, 0.0)
    m = build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), Circle(z, 0.15), 0.05))
    sol = solve_signorini(SignoriniProblem(m, "scalar", closed_form("fundamental_solution", z=list(z)),
                                           closed_form("fundamental_solution", "obstacle", z=list(z))))
    assert sol.contact_size == len(m.boundary_nodes("obstacle"))
    assert (sol.multiplier > 0).all()


def test_elastic_rigid_motion_datum_far_obstacle(coarse):
    r = lambda x: rigid_motion(x, 0.2, (0.05, -0.1))
    sol = solve_signorini(SignoriniProblem(coarse, LAME, r, 10.0))
    np.testing.assert_allclose(sol.field, r(coarse.nodes), atol=1e-12)
    assert sol.contact_size == 0
    assert energy(sol.field, SignoriniProblem(coarse, LAME)) <= 1e-10 * abs(assemble_stiffness(coarse, LAME)).max()


def test_energy_examples(coarse):
    p = SignoriniProblem(coarse, "scalar")
    assert energy(np.full(coarse.n_nodes, 3.0), p) == pytest.approx(0.0, abs=1e-12)
    assert energy(coarse.nodes[:, 0], p) == pytest.approx(np.pi * 0.91, rel=0.02)
    pe = SignoriniProblem(coarse, LAME)
    r = rigid_motion(coarse.nodes, 1.0, (0.5, 0.5))
    assert energy(r, pe) <= 1e-10 * abs(assemble_stiffness(coarse, LAME)).max() * np.abs(r).max() ** 2


def test_non_convergence_raises(coarse):
    with pytest.raises(SignoriniConvergenceError) as info:
        solve_signorini(SignoriniProblem(coarse, "scalar", closed_form("harmonic_polynomial", degree=1), 0.0,
                                         max_iters=1))
    assert info.value.cycle is not None


def test_neumann_arc_nodes_are_unconstrained(coarse):
    p = SignoriniProblem(coarse, "scalar", -1.0, 0.0, neumann_arc=(0.2, 0.4))
    sol = solve_signorini(p)
    t = coarse.node_param[sol.constrained_nodes]
    s = (t - 0.2) % 1.0
    assert not ((s > 1e-12) & (s < 0.2 - 1e-12)).any()
    assert check_complementarity(sol, p, 1e-8).ok


def random_phi(mesh, rng, amp=0.3):
    n = len(mesh.boundary_nodes("obstacle"))
    return rng.uniform(-amp, amp, n) - 0.1


def test_oracle_equivalence_scalar(tiny):
    rng = np.random.default_rng(7)
    for _ in range(5):
        p = SignoriniProblem(tiny, "scalar", fourier(0.0, [0.3], [0.2]), nodal(random_phi(tiny, rng), "obstacle"))
        assert np.abs(solve_signorini(p).field - qp_oracle(p)).max() <= 1e-8


def test_oracle_equivalence_elastic(tiny):
    rng = np.random.default_rng(8)
    for _ in range(3):
        p = SignoriniProblem(tiny, LAME, lambda x: -0.2 * x, nodal(0.05 * random_phi(tiny, rng), "obstacle"),
                             neumann_arc=(0.0, 0.3))
        assert np.abs(solve_signorini(p).field - qp_oracle(p)).max() <= 1e-8


@given(seed=st.integers(0, 2**20), shift=st.floats(0.0, 0.3))
def test_comparison_in_obstacle_function(tiny, seed, shift):
    rng = np.random.default_rng(seed)
    phi1 = random_phi(tiny, rng)
    phi2 = phi1 + shift * rng.uniform(0, 1, len(phi1))
    f = fourier(0.0, [0.3], [0.2])
    p1 = SignoriniProblem(tiny, "scalar", f, nodal(phi1, "obstacle"))
    p2 = SignoriniProblem(tiny, "scalar", f, nodal(phi2, "obstacle"))
    u1, u2 = solve_signorini(p1).field, solve_signorini(p2).field
    assert (u1 <= u2 + 1e-10).all()
    o1, o2 = qp_oracle(p1), qp_oracle(p2)
    assert (o1 <= o2 + 1e-8).all()
    assert np.abs(u1 - o1).max() <= 1e-8


@given(seed=st.integers(0, 2**20), shift=st.floats(0.0, 0.5))
def test_monotone_in_dirichlet_datum(tiny, seed, shift):
    rng = np.random.default_rng(seed)
    no = len(tiny.boundary_nodes("outer"))
    f1 = rng.uniform(-0.5, 0.5, no)
    f2 = f1 + shift * rng.uniform(0, 1, no)
    phi = nodal(random_phi(tiny, rng), "obstacle")
    u1 = solve_signorini(SignoriniProblem(tiny, "scalar", f1, phi)).field
    u2 = solve_signorini(SignoriniProblem(tiny, "scalar", f2, phi)).field
    assert (u1 <= u2 + 1e-10).all()


@given(seed=st.integers(0, 2**20), mu=st.floats(0.5, 2.0), lam=st.floats(0.5, 5.0))
def test_elastic_kkt_random(tiny, seed, mu, lam):
    rng = np.random.default_rng(seed)
    no = len(tiny.boundary_nodes("outer"))
    f = 0.2 * rng.standard_normal((no, 2))
    p = SignoriniProblem(tiny, LameParameters(mu, lam), f, nodal(0.05 * random_phi(tiny, rng), "obstacle"))
    sol = solve_signorini(p)
    assert check_complementarity(sol, p, 1e-8 * _scale(sol)).ok
    assert np.abs(sol.field - qp_oracle(p)).max() <= 1e-8


def test_rigidity_scalar_cosine():
    m = build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), None, 0.1))
    sol = solve_full_signorini_rigidity(m, "scalar", closed_form("harmonic_polynomial", degree=1))
    assert np.ptp(sol.field) <= 1e-5
    assert sol.field.mean() >= 1.0 - 1e-5


def test_rigidity_elastic_zero_obstacle():
    m = build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), None, 0.1))
    sol = solve_full_signorini_rigidity(m, LAME, 0.0)
    u = sol.field.ravel()
    assert u @ (assemble_stiffness(m, LAME) @ u) <= 1e-8


def test_rigidity_rejects_two_loop_domain(coarse):
    with pytest.raises(ValueError):
        solve_full_signorini_rigidity(coarse, "scalar", 0.0)


def test_rigidity_error_type_is_runtime():
    assert issubclass(RigidityError, RuntimeError)


def test_solution_round_trip(tmp_path, coarse):
    _, p = FIXTURES[0]
    sol = solve_signorini(p)
    write_solution(tmp_path / "s.txt", sol)
    field, active, table, meta = read_solution(tmp_path / "s.txt")
    np.testing.assert_array_equal(field, sol.field)
    np.testing.assert_array_equal(active, sol.active_set)
    np.testing.assert_array_equal(table[:, 1], sol.multiplier)
    assert meta["iterations"] == sol.iterations
