"""
P1 finite-element operators on a :class:`~signolab.geometry.Mesh`.

Vector (elastic) unknowns are interleaved: node ``i`` owns DOFs ``2i`` and
``2i + 1``. Operators are ``scipy.sparse.csr_matrix`` objects; use
:func:`canonical_entries` for an ordering-independent triplet view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import Mesh

GAUSS2 = (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0))


@dataclass(frozen=True)
class LameParameters:
    mu: float
    lambda_lame: float

    def __post_init__(self):
        if not (self.mu > 0 and self.lambda_lame > 0):
            raise ValueError(f"Lame parameters must be positive, got mu={self.mu}, lambda={self.lambda_lame}")

    def stress(self, strain):
        """Isotropic stress for strain tensors of shape (..., 2, 2)."""
        tr = np.trace(strain, axis1=-2, axis2=-1)
        return 2 * self.mu * strain + self.lambda_lame * tr[..., None, None] * np.eye(2)


def ndof_of(physics):
    return 2 if isinstance(physics, LameParameters) else 1


def p1_gradients(mesh: Mesh):
    """Per-triangle basis gradients (M, 3, 2) and areas (M,)."""
    p = mesh.nodes[mesh.triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    # grad phi_i = (y_j - y_k, x_k - x_j) / (2 area) for cyclic (i, j, k)
    gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([gx, gy], axis=2) / (2 * area[:, None, None])
    return grads, area


def _scatter(rows, cols, vals, n):
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_stiffness_scalar(mesh: Mesh) -> sp.csr_matrix:
    """Matrix of the form ``(u, v) -> int grad u . grad v``."""
    g, area = p1_gradients(mesh)
    ke = np.einsum("mik,mjk->mij", g, g) * area[:, None, None]
    t = mesh.triangles
    rows = np.repeat(t[:, :, None], 3, axis=2)
    cols = np.repeat(t[:, None, :], 3, axis=1)
    return _scatter(rows, cols, ke, mesh.n_nodes)


def _strain_matrices(mesh):
    # B (M, 3, 6) mapping element DOFs to (eps_xx, eps_yy, 2 eps_xy)
    g, area = p1_gradients(mesh)
    B = np.zeros((len(area), 3, 6))
    B[:, 0, 0::2] = g[:, :, 0]
    B[:, 1, 1::2] = g[:, :, 1]
    B[:, 2, 0::2] = g[:, :, 1]
    B[:, 2, 1::2] = g[:, :, 0]
    return B, area


def _elastic_from_D(mesh, D):
    B, area = _strain_matrices(mesh)
    ke = np.einsum("mai,ab,mbj->mij", B, D, B) * area[:, None, None]
    t = mesh.triangles
    dofs = np.stack([2 * t[:, 0], 2 * t[:, 0] + 1, 2 * t[:, 1], 2 * t[:, 1] + 1, 2 * t[:, 2], 2 * t[:, 2] + 1], axis=1)
    rows = np.repeat(dofs[:, :, None], 6, axis=2)
    cols = np.repeat(dofs[:, None, :], 6, axis=1)
    return _scatter(rows, cols, ke, 2 * mesh.n_nodes)


def assemble_stiffness_elastic(mesh: Mesh, p: LameParameters) -> sp.csr_matrix:
    """Matrix of ``(u, v) -> int 2 mu eps(u):eps(v) + lambda div u div v``."""
    mu, lam = p.mu, p.lambda_lame
    D = np.array([[2 * mu + lam, lam, 0.0], [lam, 2 * mu + lam, 0.0], [0.0, 0.0, mu]])
    return _elastic_from_D(mesh, D)


def assemble_elastic_parts(mesh: Mesh, p: LameParameters):
    """Shear part ``2 mu eps:eps`` and dilatation part ``lambda div div`` separately."""
    shear = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]]) * p.mu
    dil = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]]) * p.lambda_lame
    return _elastic_from_D(mesh, shear), _elastic_from_D(mesh, dil)


def assemble_stiffness(mesh: Mesh, physics):
    """Stiffness for ``"scalar"`` or :class:`LameParameters`, cached on the mesh.

    The cached matrix is shared; callers must not modify it in place.
    """
    key = ("K", physics if isinstance(physics, LameParameters) else "scalar")
    if key not in mesh._cache:
        if isinstance(physics, LameParameters):
            mesh._cache[key] = assemble_stiffness_elastic(mesh, physics)
        else:
            mesh._cache[key] = assemble_stiffness_scalar(mesh)
    return mesh._cache[key]


def assemble_mass(mesh: Mesh, ndof: int = 1) -> sp.csr_matrix:
    """Consistent P1 mass matrix on the domain."""
    _, area = p1_gradients(mesh)
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    me = area[:, None, None] * ref
    t = mesh.triangles
    rows = np.repeat(t[:, :, None], 3, axis=2)
    cols = np.repeat(t[:, None, :], 3, axis=1)
    M = _scatter(rows, cols, me, mesh.n_nodes)
    return expand(M, ndof)


def expand(A, ndof):
    """Kronecker-expand a scalar operator to ``ndof`` interleaved components."""
    if ndof == 1:
        return A
    out = sp.kron(A, sp.identity(ndof, format="csr"), format="csr")
    out.sort_indices()
    return out


def assemble_boundary_mass(mesh: Mesh, tag="boundary", ndof: int = 1) -> sp.csr_matrix:
    """Mass matrix of ``int_{edges} u v`` over the selected boundary edges.

    Two-point Gauss quadrature per edge (exact for P1 products).
    """
    e = mesh.boundary_edges[mesh.edge_mask(tag)]
    n = mesh.n_nodes
    if len(e) == 0:
        return expand(sp.csr_matrix((n, n)), ndof)
    L = np.linalg.norm(mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]], axis=1)
    me = np.zeros((len(e), 2, 2))
    for xi in GAUSS2:
        phi = np.array([1 - xi, xi])
        me += 0.5 * np.outer(phi, phi)[None] * L[:, None, None]
    rows = np.repeat(e[:, :, None], 2, axis=2)
    cols = np.repeat(e[:, None, :], 2, axis=1)
    return expand(_scatter(rows, cols, me, n), ndof)


def boundary_lengths(mesh: Mesh, tag="boundary"):
    """Lumped boundary mass: per-node share of the selected edge lengths."""
    e = mesh.boundary_edges[mesh.edge_mask(tag)]
    L = np.linalg.norm(mesh.nodes[e[:, 1]] - mesh.nodes[e[:, 0]], axis=1)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, e[:, 0], L / 2)
    np.add.at(out, e[:, 1], L / 2)
    return out


def boundary_load(mesh: Mesh, func, tag="boundary", ndof: int = 1):
    """Load vector ``int_{edges} g v`` with ``g = func(x, n)`` at Gauss points.

    ``n`` is the outward unit normal of the (straight) edge.
    """
    e = mesh.boundary_edges[mesh.edge_mask(tag)]
    nrm = mesh.edge_normals[mesh.edge_mask(tag)]
    a, b = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
    L = np.linalg.norm(b - a, axis=1)
    out = np.zeros((mesh.n_nodes, ndof))
    for xi in GAUSS2:
        x = a + xi * (b - a)
        g = np.asarray(func(x, nrm), dtype=float).reshape(len(e), ndof)
        w = 0.5 * L[:, None] * g
        np.add.at(out, e[:, 0], (1 - xi) * w)
        np.add.at(out, e[:, 1], xi * w)
    return out.ravel()


def domain_load(mesh: Mesh, values, ndof: int = 1):
    """Load vector ``int psi v`` for nodal P1 data ``psi``."""
    M = assemble_mass(mesh, ndof)
    return M @ np.asarray(values, dtype=float).ravel()


def canonical_entries(A):
    """Triplets ``(row, col, value)`` sorted by (row, col), explicit zeros dropped."""
    C = sp.coo_matrix(A)
    C.sum_duplicates()
    keep = C.data != 0
    r, c, v = C.row[keep], C.col[keep], C.data[keep]
    order = np.lexsort((c, r))
    return np.stack([r[order], c[order]], axis=1), v[order]


def is_symmetric(A, rtol=1e-12):
    D = (A - A.T).tocoo()
    scale = abs(A).max() if A.nnz else 0.0
    return (abs(D.data).max() if D.nnz else 0.0) <= rtol * max(scale, 1e-300)


def write_operator(path, A):
    idx, vals = canonical_entries(A)
    with open(path, "w") as fh:
        fh.write(f"# shape {A.shape[0]} {A.shape[1]}\n")
        for (r, c), v in zip(idx, vals):
            fh.write(f"{r} {c} {v:.17g}\n")


def read_operator(path):
    with open(path) as fh:
        head = fh.readline().split()
        shape = (int(head[2]), int(head[3]))
        data = np.loadtxt(fh, ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)


def traction_to_normal_derivative(gtilde, nu, p: LameParameters):
    """Normal derivatives of a field vanishing on the boundary with prescribed traction.

    For ``w = 0`` on the boundary, ``grad w_i = (d_nu w_i) nu`` and the traction
    ``sigma(w) nu`` equals ``gtilde`` exactly when
    ``d_nu w_i = (gtilde_i - (mu + lambda) nu_i (gtilde . nu) / (2 mu + lambda)) / mu``.
    """
    g = np.asarray(gtilde, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-12:
        raise ValueError(f"normal must have unit length, |nu| = {np.linalg.norm(nu)!r}")
    mu, lam = p.mu, p.lambda_lame
    return (g - (mu + lam) * nu * np.dot(g, nu) / (2 * mu + lam)) / mu


def traction_from_normal_derivative(dw, nu, p: LameParameters):
    """``sigma(w) nu`` for a field with ``grad w_i = dw_i nu`` (built from the full stress)."""
    G = np.outer(np.asarray(dw, dtype=float), np.asarray(nu, dtype=float))
    eps = 0.5 * (G + G.T)
    return p.stress(eps) @ np.asarray(nu, dtype=float)
