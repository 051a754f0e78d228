"""
Signorini thin-obstacle problems solved by a primal-dual active set method.

Scalar:   minimize int |grad u|^2  with  u = f on the outer loop,  u >= phi on the obstacle.
Elastic:  minimize int sigma(u):eps(u)  with  u = f on the outer loop,  u.nu <= phi on the obstacle.

Constraints are nodal. For the elastic problem each obstacle node is
rotated into (normal, tangential) coordinates; only the normal DOF is
constrained and the tangential DOF stays free, which makes the
tangential traction vanish weakly.

The discrete multiplier at a constrained node is the nodal residual
``(K u - F)_i`` divided by the lumped boundary length of the node, i.e. the
flux (scalar) or normal traction (elastic) the constraint has to supply.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import LameParameters, assemble_mass, assemble_stiffness, boundary_lengths, ndof_of
from .functions import as_nodal
from .geometry import Mesh, arc_length
from .zaremba import dirichlet_values, dofs_of, solve_with_fixed

log = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 50


class SignoriniConvergenceError(RuntimeError):
    """PDAS did not settle on an active set within ``max_iters``."""

    def __init__(self, message, cycle):
        super().__init__(message)
        self.cycle = cycle


class RigidityError(RuntimeError):
    pass


@dataclass
class SignoriniProblem:
    """Signorini problem data.

    Parameters
    ----------
    dirichlet : boundary data on the outer loop (see :class:`ZarembaProblem`)
    obstacle : obstacle function phi on the obstacle loop
    neumann_arc : optional arc ``(t0, t1)`` of the obstacle parameter where a
        zero flux/traction condition replaces the Signorini condition. Nodes
        strictly inside the arc are unconstrained.
    """

    mesh: Mesh
    physics: Any = "scalar"
    dirichlet: Any = 0.0
    obstacle: Any = 0.0
    neumann_arc: Optional[tuple] = None
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = 1e-8

    @property
    def ndof(self):
        return ndof_of(self.physics)

    @property
    def sense(self):
        """+1 for ``u >= phi`` (scalar), -1 for ``u.nu <= phi`` (elastic)."""
        return -1 if isinstance(self.physics, LameParameters) else 1


@dataclass
class SignoriniSolution:
    field: np.ndarray
    constrained_nodes: np.ndarray
    phi: np.ndarray
    active_set: np.ndarray
    multiplier: np.ndarray
    gap: np.ndarray
    iterations: int
    complementarity_residual: float
    sense: int = 1
    tangential: Optional[np.ndarray] = None
    history: list = field(default_factory=list)

    @property
    def contact_size(self):
        return len(self.active_set)


@dataclass
class ComplementarityReport:
    nodes: np.ndarray
    feasibility: np.ndarray  # sense * (u - phi), must be >= -tol
    multiplier_sign: np.ndarray  # sense * lambda, must be >= -tol
    product: np.ndarray  # |lambda * (u - phi)|
    tangential: Optional[np.ndarray]
    tol: float

    @property
    def residual(self):
        parts = [
            np.maximum(-self.feasibility, 0).max(initial=0.0),
            np.maximum(-self.multiplier_sign, 0).max(initial=0.0),
            self.product.max(initial=0.0),
        ]
        if self.tangential is not None:
            parts.append(np.abs(self.tangential).max(initial=0.0))
        return float(max(parts))

    @property
    def ok(self):
        return self.residual <= self.tol

    def violations(self):
        out = []
        for k, n in enumerate(self.nodes):
            if self.feasibility[k] < -self.tol:
                out.append((int(n), "infeasible", float(self.feasibility[k])))
            if self.multiplier_sign[k] < -self.tol:
                out.append((int(n), "multiplier sign", float(self.multiplier_sign[k])))
            if self.product[k] > self.tol:
                out.append((int(n), "complementarity", float(self.product[k])))
        return out


def _rotation(mesh, nodes, normals, ndof):
    """Sparse T with u = T u_hat; constrained nodes get (normal, tangent) columns."""
    n = ndof * mesh.n_nodes
    if ndof == 1:
        return sp.identity(n, format="csr")
    T = sp.lil_matrix((n, n))
    T.setdiag(1.0)
    for i, nu in zip(nodes, normals):
        tau = np.array([-nu[1], nu[0]])
        T[2 * i, 2 * i], T[2 * i, 2 * i + 1] = nu[0], tau[0]
        T[2 * i + 1, 2 * i], T[2 * i + 1, 2 * i + 1] = nu[1], tau[1]
    return T.tocsr()


def pdas(K, F, fixed, fixed_vals, cdofs, phi, sense, max_iters=DEFAULT_MAX_ITERS, c=1.0):
    """Primal-dual active set iteration for ``sense * (x_k - phi_k) >= 0`` on ``cdofs``.

    The update activates DOF k iff ``sense*mu_k + c*d_k*sense*(phi_k - x_k) > 0``
    where ``mu = K x - F`` and ``d = diag(K)`` (diagonal scaling). The test
    uses a roundoff threshold so that biactive nodes (``x = phi`` and
    ``mu = 0``) do not flip between iterations.

    Returns ``(x, active_mask, mu, iterations, history)``.
    """
    cdofs = np.asarray(cdofs, dtype=np.int64)
    phi = np.asarray(phi, dtype=float)
    d = K.diagonal()[cdofs]
    active = np.zeros(len(cdofs), dtype=bool)
    seen = []
    history = []
    for it in range(1, max_iters + 1):
        fx = np.concatenate([fixed, cdofs[active]])
        fv = np.concatenate([fixed_vals, phi[active]])
        x = solve_with_fixed(K, F, fx, fv)
        mu = (K @ x - F)[cdofs]
        mu[~active] = 0.0
        scale = max(1.0, np.abs(phi).max(initial=0.0), np.abs(x).max(initial=0.0))
        new = sense * mu + c * d * sense * (phi - x[cdofs]) > 1e-13 * d * scale
        history.append(int(new.sum()))
        if np.array_equal(new, active):
            return x, active, mu, it, history
        key = new.tobytes()
        if key in seen:
            log.debug("PDAS revisits an earlier active set at iteration %d", it)
        seen.append(key)
        active = new
    cycle = [np.where(np.frombuffer(k, dtype=bool))[0] for k in seen[-4:]]
    raise SignoriniConvergenceError(f"PDAS did not converge in {max_iters} iterations", cycle)


def _constrained_nodes(mesh, loop, neumann_arc):
    nodes = mesh.boundary_nodes(loop)
    keep = np.ones(len(nodes), dtype=bool)
    if neumann_arc is not None:
        # junction nodes at the arc ends stay constrained
        s = (mesh.node_param[nodes] - neumann_arc[0]) % 1.0
        keep &= ~((s > 1e-12) & (s < arc_length(neumann_arc) - 1e-12))
    return nodes, keep


def _solve(mesh, physics, K, F, fixed, fixed_vals, loop, phi_all, neumann_arc, max_iters, tol, scale):
    ndof = ndof_of(physics)
    sense = -1 if ndof == 2 else 1
    loop_nodes, keep = _constrained_nodes(mesh, loop, neumann_arc)
    cnodes = loop_nodes[keep]
    phi = np.asarray(phi_all, dtype=float)[keep]
    normals = mesh.node_normals(loop)[keep]
    T = _rotation(mesh, cnodes, normals, ndof)
    Kh = (T.T @ K @ T).tocsr()
    Fh = T.T @ F
    cdofs = ndof * cnodes
    xh, active, mu, its, hist = pdas(Kh, Fh, fixed, fixed_vals, cdofs, phi, sense, max_iters)
    x = T @ xh
    lengths = boundary_lengths(mesh, loop)[cnodes]
    res = Kh @ xh - Fh
    lam = res[cdofs] / lengths
    tang = res[cdofs + 1] / lengths if ndof == 2 else None
    gap = xh[cdofs] - phi
    feas = sense * gap
    comp = np.abs(lam * gap)
    resid = max(
        np.maximum(-feas, 0).max(initial=0.0),
        np.maximum(-sense * lam, 0).max(initial=0.0),
        comp.max(initial=0.0),
        np.abs(tang).max(initial=0.0) if tang is not None else 0.0,
    )
    field_ = x if ndof == 1 else x.reshape(-1, 2)
    return SignoriniSolution(
        field=field_,
        constrained_nodes=cnodes,
        phi=phi,
        active_set=cnodes[active],
        multiplier=lam,
        gap=gap,
        iterations=its,
        complementarity_residual=float(resid),
        sense=sense,
        tangential=tang,
        history=hist,
    )


def _problem_scale(f, phi):
    return max(1.0, float(np.abs(f).max(initial=0.0)), float(np.abs(phi).max(initial=0.0)))


def solve_signorini(problem: SignoriniProblem) -> SignoriniSolution:
    mesh, ndof = problem.mesh, problem.ndof
    outer = mesh.boundary_nodes("outer")
    if len(outer) == 0:
        raise ValueError("solve_signorini needs a Dirichlet part; use solve_full_signorini_rigidity")
    if len(mesh.boundary_nodes("obstacle")) == 0:
        raise ValueError("mesh has no obstacle loop")
    K = assemble_stiffness(mesh, problem.physics)
    F = np.zeros(K.shape[0])
    f = dirichlet_values(mesh, problem.dirichlet, ndof)
    phi = as_nodal(problem.obstacle, mesh, "obstacle", 1)
    return _solve(mesh, problem.physics, K, F, dofs_of(outer, ndof), f, "obstacle", phi,
                  problem.neumann_arc, problem.max_iters, problem.tol, _problem_scale(f, phi))


def check_complementarity(sol: SignoriniSolution, problem: SignoriniProblem, tol=None) -> ComplementarityReport:
    """Recompute feasibility, multiplier sign and complementarity from the field alone."""
    mesh, ndof = problem.mesh, problem.ndof
    tol = problem.tol * _problem_scale(sol.phi, sol.phi) if tol is None else tol
    K = assemble_stiffness(mesh, problem.physics)
    u = np.asarray(sol.field, dtype=float).ravel()
    loop = "obstacle" if len(mesh.boundary_nodes("obstacle")) else "outer"
    r = (K @ u).reshape(-1, ndof)
    nodes = sol.constrained_nodes
    lengths = boundary_lengths(mesh, loop)[nodes]
    if ndof == 1:
        lam = r[nodes, 0] / lengths
        gap = u[nodes] - sol.phi
        tang = None
    else:
        loop_nodes = mesh.boundary_nodes(loop)
        pos = {int(n): k for k, n in enumerate(loop_nodes)}
        nu = mesh.node_normals(loop)[[pos[int(n)] for n in nodes]]
        tau = np.stack([-nu[:, 1], nu[:, 0]], axis=1)
        un = (u.reshape(-1, 2)[nodes] * nu).sum(axis=1)
        lam = (r[nodes] * nu).sum(axis=1) / lengths
        tang = (r[nodes] * tau).sum(axis=1) / lengths
        gap = un - sol.phi
    s = sol.sense
    return ComplementarityReport(nodes, s * gap, s * lam, np.abs(lam * gap), tang, tol)


def energy(field_, problem) -> float:
    """Dirichlet energy ``int |grad u|^2`` or strain energy ``int sigma(u):eps(u)``."""
    K = assemble_stiffness(problem.mesh, problem.physics)
    u = np.asarray(field_, dtype=float).ravel()
    return float(u @ (K @ u))


def feasible_perturbations(sol: SignoriniSolution, problem: SignoriniProblem, rng, count=8, eps=1e-2):
    """Random feasible competitors and their energy increase over ``sol``.

    Each competitor adds ``eps * w`` (``w`` standard normal, zero on the outer
    loop) to the solution and projects the constrained nodes back onto the
    feasible set. Returns an array of ``energy(competitor) - energy(sol)``,
    which must be nonnegative up to roundoff at a minimizer.
    """
    mesh, ndof = problem.mesh, problem.ndof
    u = np.asarray(sol.field, dtype=float).reshape(-1, ndof)
    outer = mesh.boundary_nodes("outer")
    cn = sol.constrained_nodes
    if ndof == 2:
        loop_nodes = mesh.boundary_nodes("obstacle")
        pos = {int(n): k for k, n in enumerate(loop_nodes)}
        nu = mesh.node_normals("obstacle")[[pos[int(n)] for n in cn]]
    e0 = energy(u, problem)
    scale = max(1.0, float(np.abs(u).max()))
    out = []
    for _ in range(count):
        w = rng.standard_normal(u.shape)
        w[outer] = 0.0
        v = u + eps * scale * w
        if ndof == 1:
            v[cn, 0] = np.maximum(v[cn, 0], sol.phi)
        else:
            excess = np.maximum((v[cn] * nu).sum(axis=1) - sol.phi, 0.0)
            v[cn] -= excess[:, None] * nu
        out.append(energy(v, problem) - e0)
    return np.array(out)


def solve_full_signorini_rigidity(mesh: Mesh, physics, phi, max_iters=DEFAULT_MAX_ITERS, tol=1e-5):
    """Signorini condition on the whole boundary of a single-loop domain.

    The singular Neumann-type system is regularized by ``eps * M`` with
    ``eps = 1e-10 * ||K||`` (M the domain mass matrix); only energy and
    oscillation floors are meaningful since the constant (or rigid motion)
    is not unique.
    """
    if len(mesh.boundary_nodes("obstacle")):
        raise ValueError("rigidity mode expects a single-loop domain (no obstacle)")
    ndof = ndof_of(physics)
    K = assemble_stiffness(mesh, physics)
    eps = 1e-10 * spla.norm(K, np.inf)
    Kr = (K + eps * assemble_mass(mesh, ndof)).tocsr()
    phi_n = as_nodal(phi, mesh, "outer", 1)
    F = np.zeros(K.shape[0])
    empty = np.zeros(0, dtype=np.int64)
    sol = _solve(mesh, physics, Kr, F, empty, np.zeros(0), "outer", phi_n, None, max_iters, 1e-8,
                 _problem_scale(phi_n, phi_n))
    scale = _problem_scale(phi_n, phi_n)
    e = float(sol.field.ravel() @ (K @ sol.field.ravel()))
    floor = (tol * scale) ** 2 if ndof == 1 else 1e-8 * scale**2
    if e > floor:
        raise RigidityError(f"energy floor not reached: energy {e:.3e} > {floor:.3e}")
    return sol


def write_solution(path, sol: SignoriniSolution):
    f = np.asarray(sol.field).reshape(len(sol.field), -1)
    with open(path, "w") as fh:
        fh.write(f"# iterations {sol.iterations}\n# complementarity_residual {sol.complementarity_residual:.17g}\n")
        fh.write(f"field {len(f)}\n")
        for i, row in enumerate(f):
            fh.write(f"{i} " + " ".join(f"{x:.17g}" for x in row) + "\n")
        fh.write(f"active_set {len(sol.active_set)}\n")
        for n in sol.active_set:
            fh.write(f"{int(n)}\n")
        fh.write(f"multiplier {len(sol.constrained_nodes)}\n")
        for n, lam, phi, g in zip(sol.constrained_nodes, sol.multiplier, sol.phi, sol.gap):
            fh.write(f"{int(n)} {lam:.17g} {phi:.17g} {g:.17g}\n")


def read_solution(path):
    """Read back ``(field, active_set, multiplier_table, meta)``."""
    meta, sections, cur = {}, {}, None
    with open(path) as fh:
        for ln in fh:
            if ln.startswith("#"):
                k, v = ln[1:].split()
                meta[k] = float(v)
                continue
            parts = ln.split()
            if len(parts) == 2 and parts[0] in ("field", "active_set", "multiplier"):
                cur = parts[0]
                sections[cur] = []
                continue
            sections[cur].append([float(x) for x in parts])
    fld = np.array(sections["field"])[:, 1:]
    fld = fld[:, 0] if fld.shape[1] == 1 else fld
    active = np.array(sections["active_set"], dtype=np.int64).ravel()
    mult = np.array(sections["multiplier"]).reshape(-1, 4)
    return fld, active, mult, meta
