"""
Linear mixed problems: Dirichlet data on the outer loop, Neumann (flux or
traction) data on the obstacle loop, optional interior source.

Scalar:   Laplace(v) = psi,      v = f on the outer loop,  d_nu v = g on the obstacle.
Elastic:  div sigma(v) = psi,    v = f on the outer loop,  sigma(v) nu = g on the obstacle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    assemble_boundary_mass,
    assemble_mass,
    assemble_stiffness,
    boundary_load,
    ndof_of,
)
from .functions import BoundaryFunction, as_nodal, point_evaluator
from .geometry import Mesh


class SingularSystemError(ValueError):
    """The constrained system has no Dirichlet part and is singular."""


def dofs_of(nodes, ndof):
    nodes = np.asarray(nodes, dtype=np.int64)
    if ndof == 1:
        return nodes
    return (ndof * nodes[:, None] + np.arange(ndof)[None, :]).ravel()


def solve_with_fixed(K, F, fixed, values):
    """Solve ``K x = F`` on the free DOFs with ``x[fixed] = values``."""
    n = K.shape[0]
    x = np.zeros(n)
    fixed = np.asarray(fixed, dtype=np.int64)
    x[fixed] = values
    free = np.setdiff1d(np.arange(n), fixed, assume_unique=False)
    if len(free) == 0:
        return x
    Kc = K.tocsc()
    rhs = F[free] - Kc[free][:, fixed] @ x[fixed]
    Kff = Kc[free][:, free]
    x[free] = spla.splu(Kff.tocsc()).solve(rhs)
    return x


class FixedDofSolver:
    """Factorized solver for repeated solves with one fixed DOF set."""

    def __init__(self, K, fixed):
        self.K = K.tocsc()
        self.n = K.shape[0]
        self.fixed = np.asarray(fixed, dtype=np.int64)
        self.free = np.setdiff1d(np.arange(self.n), self.fixed)
        self._Kfc = self.K[self.free][:, self.fixed]
        self._lu = spla.splu(self.K[self.free][:, self.free].tocsc())

    def solve(self, F, values):
        x = np.zeros(self.n)
        x[self.fixed] = values
        x[self.free] = self._lu.solve(F[self.free] - self._Kfc @ np.asarray(values, dtype=float))
        return x


@dataclass
class ZarembaProblem:
    """Mixed problem data.

    ``dirichlet`` and ``neumann`` accept a :class:`BoundaryFunction`, a nodal
    array, a scalar, or a callable. A callable ``neumann`` is called as
    ``g(x, n)`` at edge quadrature points; a callable ``dirichlet`` as ``f(x)``.
    """

    mesh: Mesh
    physics: Any = "scalar"
    dirichlet: Any = 0.0
    neumann: Any = None
    source: Optional[np.ndarray] = None

    def __post_init__(self):
        if isinstance(self.dirichlet, BoundaryFunction) and self.dirichlet.target != "outer":
            raise ValueError("dirichlet data must target the outer loop")
        if isinstance(self.neumann, BoundaryFunction) and self.neumann.target != "obstacle":
            raise ValueError("neumann data must target the obstacle loop")

    @property
    def ndof(self):
        return ndof_of(self.physics)


def neumann_load(mesh: Mesh, neumann, ndof: int, tag="obstacle"):
    n = ndof * mesh.n_nodes
    if neumann is None or len(mesh.boundary_nodes(tag)) == 0:
        return np.zeros(n)
    if isinstance(neumann, BoundaryFunction):
        fx = point_evaluator(neumann)
        if fx is not None:
            return boundary_load(mesh, lambda x, nrm: fx(x), tag, ndof)
    elif callable(neumann):
        return boundary_load(mesh, neumann, tag, ndof)
    g = as_nodal(neumann, mesh, tag, ndof)
    full = np.zeros((mesh.n_nodes, ndof))
    full[mesh.boundary_nodes(tag)] = g.reshape(-1, ndof)
    return assemble_boundary_mass(mesh, tag, ndof) @ full.ravel()


def source_load(mesh: Mesh, source, ndof: int):
    """Interior part of the right-hand side, ``-int psi v``."""
    if source is None:
        return np.zeros(ndof * mesh.n_nodes)
    return -(assemble_mass(mesh, ndof) @ np.asarray(source, dtype=float).ravel())


def dirichlet_values(mesh: Mesh, dirichlet, ndof: int):
    return as_nodal(dirichlet, mesh, "outer", ndof).ravel()


def solve_zaremba(problem: ZarembaProblem) -> np.ndarray:
    """Solve the mixed problem; returns nodal values (N,) or (N, 2)."""
    mesh, ndof = problem.mesh, problem.ndof
    outer = mesh.boundary_nodes("outer")
    if len(outer) == 0:
        raise SingularSystemError("no Dirichlet nodes: pure Neumann problems are not supported here")
    K = assemble_stiffness(mesh, problem.physics)
    F = source_load(mesh, problem.source, ndof) + neumann_load(mesh, problem.neumann, ndof)
    x = solve_with_fixed(K, F, dofs_of(outer, ndof), dirichlet_values(mesh, problem.dirichlet, ndof))
    return x if ndof == 1 else x.reshape(-1, ndof)


def consistent_flux(mesh: Mesh, K, u, interior_load, loop: str, ndof: int = 1):
    """Variational boundary flux on one loop, ordered like ``mesh.boundary_nodes(loop)``.

    Solves ``M_loop q = (K u - F_interior)|_loop`` where ``M_loop`` is the
    boundary mass matrix of the loop.
    """
    nodes = mesh.boundary_nodes(loop)
    r = K @ np.asarray(u, dtype=float).ravel() - interior_load
    d = dofs_of(nodes, ndof)
    M = assemble_boundary_mass(mesh, loop, ndof).tocsc()[d][:, d]
    q = spla.splu(M.tocsc()).solve(r[d])
    return q if ndof == 1 else q.reshape(-1, ndof)


def _loop_of(mesh, tag):
    if tag in ("outer", "obstacle"):
        return tag
    e = mesh.edge_mask(tag)
    if not e.any():
        raise ValueError(f"boundary selector {tag!r} selects no edges")
    curves = set(mesh.node_curve[mesh.boundary_edges[e, 0]].tolist())
    if len(curves) != 1:
        raise ValueError(f"boundary selector {tag!r} spans both loops")
    return "outer" if curves == {0} else "obstacle"


def boundary_flux(problem: ZarembaProblem, solution, tag="outer"):
    """Consistent normal flux (scalar) or traction (elastic) on ``tag``.

    Values are ordered like ``mesh.boundary_nodes(tag)``.
    """
    mesh, ndof = problem.mesh, problem.ndof
    loop = _loop_of(mesh, tag)
    K = assemble_stiffness(mesh, problem.physics)
    q = consistent_flux(mesh, K, solution, source_load(mesh, problem.source, ndof), loop, ndof)
    if tag == loop:
        return q
    loop_nodes = mesh.boundary_nodes(loop)
    pos = {int(n): k for k, n in enumerate(loop_nodes)}
    sel = np.array([pos[int(n)] for n in mesh.boundary_nodes(tag)])
    return q[sel]


def _full_boundary_flux(mesh, K, u, ndof):
    q = np.zeros((mesh.n_nodes, ndof))
    zero = np.zeros(K.shape[0])
    for loop in ("outer", "obstacle"):
        nodes = mesh.boundary_nodes(loop)
        if len(nodes):
            q[nodes] = consistent_flux(mesh, K, u, zero, loop, ndof).reshape(-1, ndof)
    return q.ravel()


def verify_green_identity(mesh: Mesh, physics, u, v) -> float:
    """Residual of the discrete second Green identity.

    Compares the interior pairing ``u_I.(K v)_I - v_I.(K u)_I`` (the weak
    form of ``int (u L v - v L u)``) with the boundary pairing
    ``<q_v, u> - <q_u, v>`` of consistent fluxes. Returns the absolute
    difference.
    """
    ndof = ndof_of(physics)
    K = assemble_stiffness(mesh, physics)
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    Mb = assemble_boundary_mass(mesh, "boundary", ndof)
    qu = _full_boundary_flux(mesh, K, u, ndof)
    qv = _full_boundary_flux(mesh, K, v, ndof)
    interior = np.ones(mesh.n_nodes, dtype=bool)
    interior[mesh.boundary_nodes("boundary")] = False
    I = dofs_of(np.where(interior)[0], ndof)
    Ku, Kv = K @ u, K @ v
    lhs = u[I] @ Kv[I] - v[I] @ Ku[I]
    rhs = u @ (Mb @ qv) - v @ (Mb @ qu)
    return abs(lhs + rhs)


def green_scale(mesh: Mesh, physics, u, v):
    K = assemble_stiffness(mesh, physics)
    return np.linalg.norm(np.ravel(u)) * np.linalg.norm(np.ravel(v)) * spla.norm(K)


def write_field(path, field):
    f = np.asarray(field, dtype=float)
    f2 = f.reshape(len(f), -1)
    with open(path, "w") as fh:
        fh.write("# node " + " ".join(f"c{k}" for k in range(f2.shape[1])) + "\n")
        for i, row in enumerate(f2):
            fh.write(f"{i} " + " ".join(f"{x:.17g}" for x in row) + "\n")


def read_field(path):
    data = np.loadtxt(path, ndmin=2)
    vals = data[np.argsort(data[:, 0]), 1:]
    return vals[:, 0] if vals.shape[1] == 1 else vals
