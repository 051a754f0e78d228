"""
Independent reference computations used to cross-check the solvers.

These routines deliberately share no code with the active-set solver: the
constrained quadratic program is reduced by a dense Schur complement and
minimized with accelerated projected gradient descent.
"""

from __future__ import annotations

import numpy as np

from .assembly import assemble_stiffness, ndof_of
from .functions import FundamentalSolution, as_nodal


def projected_gradient_qp(S, b, lower, upper, tol=1e-15, max_iters=2_000_000):
    """Minimize ``z'Sz/2 - b'z`` over the box ``lower <= z <= upper`` (FISTA with restart)."""
    S = np.asarray(S, dtype=float)
    L = float(np.linalg.eigvalsh(S).max())
    step = 1.0 / L
    z = np.clip(np.zeros(len(b)), lower, upper)
    y, t = z.copy(), 1.0
    for k in range(max_iters):
        z_new = np.clip(y - step * (S @ y - b), lower, upper)
        if np.abs(z_new - z).max() <= tol * max(1.0, np.abs(z_new).max()):
            return z_new, k
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = z_new + (t - 1) / t_new * (z_new - z)
        if (y - z_new) @ (z_new - z) > 0:  # restart when momentum points uphill
            t_new, y = 1.0, z_new.copy()
        z, t = z_new, t_new
    raise RuntimeError("projected gradient oracle did not converge")


def qp_oracle(problem):
    """Brute-force solution of a :class:`SignoriniProblem` (small meshes only).

    Returns the field with the same shape as :func:`solve_signorini` output.
    """
    mesh = problem.mesh
    ndof = ndof_of(problem.physics)
    K = assemble_stiffness(mesh, problem.physics).toarray()
    n = K.shape[0]
    outer = mesh.boundary_nodes("outer")
    obst = mesh.boundary_nodes("obstacle")
    t = mesh.node_param[obst]
    keep = np.ones(len(obst), dtype=bool)
    if problem.neumann_arc is not None:
        a, b = problem.neumann_arc
        keep = ~(((t - a) % 1.0 > 1e-12) & ((t - a) % 1.0 < (b - a) % 1.0 - 1e-12))
    cnodes = obst[keep]
    phi = as_nodal(problem.obstacle, mesh, "obstacle", 1)[keep]

    # change of variables: constrained quantity as an explicit coordinate
    T = np.eye(n)
    if ndof == 2:
        nu = -mesh.obstacle.normal(mesh.node_param[cnodes])
        for i, v in zip(cnodes, nu):
            T[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = [[v[0], -v[1]], [v[1], v[0]]]
    Kh = T.T @ K @ T

    fixed = (ndof * outer[:, None] + np.arange(ndof)).ravel()
    fv = as_nodal(problem.dirichlet, mesh, "outer", ndof).ravel()
    c = ndof * cnodes
    free = np.setdiff1d(np.arange(n), np.concatenate([fixed, c]))
    # Schur complement onto the constrained coordinates
    Kff = Kh[np.ix_(free, free)]
    X = np.linalg.solve(Kff, np.column_stack([Kh[np.ix_(free, c)], Kh[np.ix_(free, fixed)] @ fv]))
    S = Kh[np.ix_(c, c)] - Kh[np.ix_(c, free)] @ X[:, :-1]
    S = 0.5 * (S + S.T)
    rhs = -(Kh[np.ix_(c, fixed)] @ fv - Kh[np.ix_(c, free)] @ X[:, -1])
    if ndof == 1:
        z, _ = projected_gradient_qp(S, rhs, phi, np.inf)
    else:
        z, _ = projected_gradient_qp(S, rhs, -np.inf, phi)
    xh = np.zeros(n)
    xh[fixed] = fv
    xh[c] = z
    xh[free] = -X[:, -1] - X[:, :-1] @ z
    x = T @ xh
    return x if ndof == 1 else x.reshape(-1, 2)


def fd_laplacian(func, pts, step=1e-4):
    """Five-point finite-difference Laplacian of a scalar point function."""
    pts = np.atleast_2d(pts)
    ex, ey = np.array([step, 0.0]), np.array([0.0, step])
    return (func(pts + ex) + func(pts - ex) + func(pts + ey) + func(pts - ey) - 4 * func(pts)) / step**2


def fundamental_laplacian_check(z, pts, step=1e-4):
    """Max |FD Laplacian| of the fundamental solution with pole ``z`` at ``pts``."""
    return float(np.abs(fd_laplacian(FundamentalSolution(tuple(z)).value, pts, step)).max())
