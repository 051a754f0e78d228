"""
Boundary control of obstacle traces through the linear mixed problem.

For Dirichlet data ``f = sum_j c_j p_j`` built from a probe basis supported
in the control arc, ``v^f`` solves the mixed problem with zero flux
(traction) on the obstacle loop. The control minimizes

    ||v^f|_O - target||^2_{M_O} + alpha ||f||^2_{M_outer}

over the coefficients ``c`` (Tikhonov-regularized least squares).
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .assembly import LameParameters, assemble_boundary_mass, assemble_stiffness, ndof_of
from .dtn import ProbeBasis
from .functions import as_nodal
from .geometry import Mesh
from .signorini import SignoriniProblem, solve_signorini
from .zaremba import FixedDofSolver, dofs_of

log = logging.getLogger(__name__)

COND_WARN = 1e14


class ControlError(RuntimeError):
    pass


class IllConditionedWarning(UserWarning):
    pass


def _loop_mass(mesh, loop, ndof):
    d = dofs_of(mesh.boundary_nodes(loop), ndof)
    return assemble_boundary_mass(mesh, loop, ndof).tocsr()[d][:, d].toarray()


def mass_norm(M, v):
    v = np.ravel(v)
    return float(np.sqrt(max(v @ M @ v, 0.0)))


class ControlOperator:
    """Probe-to-trace map ``c -> v^f|_O`` with cached solves and Gram factors."""

    def __init__(self, mesh: Mesh, physics, basis: ProbeBasis):
        self.mesh, self.physics, self.basis = mesh, physics, basis
        self.ndof = ndof = ndof_of(physics)
        if basis.ndof != ndof:
            raise ValueError(f"probe basis has {basis.ndof} components, problem needs {ndof}")
        K = assemble_stiffness(mesh, physics)
        outer = mesh.boundary_nodes("outer")
        self.obstacle_dofs = dofs_of(mesh.boundary_nodes("obstacle"), ndof)
        self.solver = FixedDofSolver(K, dofs_of(outer, ndof))
        zero = np.zeros(K.shape[0])
        self.P = np.column_stack([np.ravel(basis.values(mesh, j)) for j in range(basis.count)])
        self.fields = np.column_stack([self.solver.solve(zero, self.P[:, j]) for j in range(basis.count)])
        self.T = self.fields[self.obstacle_dofs]
        self.M_O = _loop_mass(mesh, "obstacle", ndof)
        self.M_B = _loop_mass(mesh, "outer", ndof)
        self.L_O = sla.cholesky(self.M_O, lower=False)
        self.L_B = sla.cholesky(self.M_B, lower=False)

    def mixed_field(self, control):
        """Mixed-problem solution for nodal outer data ``control``."""
        K0 = np.zeros(self.solver.n)
        return self.solver.solve(K0, np.ravel(control))

    def solve(self, target, alpha):
        A = np.vstack([self.L_O @ self.T, np.sqrt(alpha) * (self.L_B @ self.P)])
        b = np.concatenate([self.L_O @ target, np.zeros(self.P.shape[0])])
        G = A.T @ A
        cond = np.linalg.cond(G)
        if cond > COND_WARN:
            warnings.warn(
                f"control Gram matrix condition {cond:.2e} exceeds {COND_WARN:.0e}; increase alpha or shrink the basis",
                IllConditionedWarning,
                stacklevel=3,
            )
        c, *_ = np.linalg.lstsq(A, b, rcond=None)
        normal_res = np.linalg.norm(G @ c - A.T @ b) / max(np.linalg.norm(A.T @ b), 1e-300)
        return c, cond, float(normal_res)


@dataclass
class ControlResult:
    coefficients: np.ndarray
    control: np.ndarray  # nodal data on the outer loop
    achieved: np.ndarray  # trace on the obstacle loop
    target: np.ndarray
    residual: float  # relative, mass-weighted
    residual_max: float
    alpha: float
    objective: float
    condition: float
    normal_residual: float
    curve: list = field(default_factory=list)  # (alpha, residual) rows, alpha descending
    clearance: Optional[np.ndarray] = None
    field: Optional[np.ndarray] = None

    def write_csv(self, prefix):
        """Write ``<prefix>_coefficients.csv``, ``_traces.csv`` and ``_alpha.csv``; return paths."""
        paths = [f"{prefix}_coefficients.csv", f"{prefix}_traces.csv", f"{prefix}_alpha.csv"]
        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["probe", "coefficient"])
            for j, c in enumerate(self.coefficients):
                w.writerow([j, repr(float(c))])
        a, t = np.asarray(self.achieved), np.asarray(self.target)
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "achieved", "target"] if a.ndim == 1 else ["node", "achieved_x", "achieved_y", "target_x", "target_y"])
            for k in range(len(a)):
                w.writerow([k, *map(repr, np.ravel(a[k]).astype(float).tolist()), *map(repr, np.ravel(t[k]).astype(float).tolist())])
        with open(paths[2], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "residual"])
            for al, r in self.curve:
                w.writerow([repr(float(al)), repr(float(r))])
        return paths


def _result(op: ControlOperator, target, alpha, c, cond, nres):
    ndof = op.ndof
    ach = op.T @ c
    tnorm = mass_norm(op.M_O, target)
    err = ach - target
    res = mass_norm(op.M_O, err) / tnorm if tnorm > 0 else mass_norm(op.M_O, err)
    obj = mass_norm(op.M_O, err) ** 2 + alpha * mass_norm(op.M_B, op.P @ c) ** 2
    shape = (-1,) if ndof == 1 else (-1, ndof)
    return ControlResult(
        coefficients=c,
        control=(op.P @ c).reshape(shape),
        achieved=ach.reshape(shape),
        target=np.asarray(target).reshape(shape),
        residual=float(res),
        residual_max=float(np.abs(err).max()),
        alpha=float(alpha),
        objective=float(obj),
        condition=float(cond),
        normal_residual=nres,
        field=(op.fields @ c).reshape(shape),
    )


def find_control(mesh: Mesh, physics, target, basis: ProbeBasis, alpha: float, operator=None) -> ControlResult:
    """Tikhonov control of the obstacle trace towards ``target``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    op = operator or ControlOperator(mesh, physics, basis)
    y = np.ravel(as_nodal(target, mesh, "obstacle", op.ndof))
    c, cond, nres = op.solve(y, alpha)
    r = _result(op, y, alpha, c, cond, nres)
    r.curve = [(r.alpha, r.residual)]
    return r


def residual_curve(mesh: Mesh, physics, target, basis: ProbeBasis, alphas, operator=None):
    """One :func:`find_control` per alpha, sorted by alpha descending."""
    op = operator or ControlOperator(mesh, physics, basis)
    return [find_control(mesh, physics, target, basis, a, op) for a in sorted(alphas, reverse=True)]


def recompute_residual(mesh: Mesh, result: ControlResult, ndof=None):
    """Relative residual from the stored traces alone."""
    ndof = ndof or (1 if np.ndim(result.achieved) == 1 else 2)
    M = _loop_mass(mesh, "obstacle", ndof)
    t = np.ravel(result.target)
    return mass_norm(M, np.ravel(result.achieved) - t) / mass_norm(M, t)


def normal_trace(mesh: Mesh, values):
    """Normal component ``v . nu`` of vector obstacle data (nu points into the obstacle)."""
    return (np.asarray(values).reshape(-1, 2) * mesh.node_normals("obstacle")).sum(axis=1)


def certify_clearance(mesh: Mesh, physics, achieved, phi):
    """Independent nodewise check of strict clearance; returns (ok, margins).

    Scalar: ``achieved - phi > 0``; elastic: ``phi - achieved.nu > 0``.
    """
    phi = np.asarray(phi, dtype=float)
    if isinstance(physics, LameParameters):
        margins = np.array([phi[k] - float(np.dot(a, n)) for k, (a, n) in
                            enumerate(zip(np.asarray(achieved).reshape(-1, 2), mesh.node_normals("obstacle")))])
    else:
        margins = np.array([float(a) - p for a, p in zip(np.ravel(achieved), phi)])
    return bool((margins > 0).all()), margins


def strict_majorant_control(mesh: Mesh, physics, phi, delta: float, basis: ProbeBasis,
                            alpha: float = 1e-8, perturbation: Optional[int] = None,
                            field_tol: float = 1e-10) -> ControlResult:
    """Control whose obstacle trace strictly clears the obstacle function.

    Scalar target is ``phi + delta``; elastic target is ``M nu`` with
    ``M = -max|phi| - 1``. With ``perturbation=j`` a multiple of probe ``j``
    is added whose trace stays below ``delta / 2`` in max norm (scalar).
    The clearance is verified nodewise and the Signorini problem is re-solved
    with the control: it must have empty contact and return the mixed field.
    """
    if not delta > 0:
        raise ValueError("clearance delta must be positive")
    op = ControlOperator(mesh, physics, basis)
    phi_n = np.asarray(as_nodal(phi, mesh, "obstacle", 1), dtype=float)
    elastic = isinstance(physics, LameParameters)
    if elastic:
        Mval = -np.abs(phi_n).max(initial=0.0) - 1.0
        target = Mval * mesh.node_normals("obstacle")
    else:
        target = phi_n + delta
    res = find_control(mesh, physics, target, basis, alpha, op)
    if perturbation is not None:
        eta = op.T[:, perturbation]
        scale = np.abs(eta).max()
        if scale > 0:
            eps = 0.5 * delta / scale
            c = res.coefficients.copy()
            c[perturbation] += eps
            res = _result(op, np.ravel(target), alpha, c, res.condition, res.normal_residual)
    ok, margins = certify_clearance(mesh, physics, res.achieved, phi_n)
    res.clearance = margins
    if not ok:
        k = int(np.argmin(margins))
        node = int(mesh.boundary_nodes("obstacle")[k])
        raise ControlError(
            f"control does not clear the obstacle at node {node} (margin {margins[k]:.3e}); "
            "use a larger basis or a smaller alpha"
        )
    sol = solve_signorini(SignoriniProblem(mesh, physics, res.control, phi_n))
    if sol.contact_size:
        raise ControlError(f"re-solve touches the obstacle at {sol.contact_size} nodes")
    diff = np.abs(np.ravel(sol.field) - np.ravel(res.field)).max()
    if diff > field_tol * max(1.0, np.abs(res.field).max()):
        raise ControlError(f"re-solved field differs from the mixed solution by {diff:.3e}")
    return res
