"""
Discrete local Dirichlet-to-Neumann maps of Signorini problems.

A probe is Dirichlet data supported in the control arc S of the outer loop.
Its response is the consistent flux (scalar) or traction (elastic) on the
measurement arc R, obtained from the Signorini solve with that datum. The
map is nonlinear once contact occurs, so a :class:`DtnMatrix` is a table of
per-probe responses; it is a matrix in the strict sense only when no probe
touches the obstacle (``metadata["linear"]``).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .assembly import LameParameters, assemble_boundary_mass, assemble_stiffness, ndof_of
from .functions import BoundaryFunction, as_nodal, closed_form, probe_profile
from .geometry import FULL_ARC, Mesh, in_arc, is_full_arc
from .signorini import SignoriniProblem, SignoriniSolution, solve_signorini
from .zaremba import consistent_flux, dofs_of

DEFAULT_PROBES = 12


def physics_descriptor(physics):
    if isinstance(physics, LameParameters):
        return {"kind": "elastic", "mu": physics.mu, "lambda": physics.lambda_lame}
    return {"kind": "scalar"}


def describe(data):
    """JSON-friendly descriptor of boundary data."""
    if isinstance(data, BoundaryFunction):
        return data.to_dict()
    if np.isscalar(data):
        return {"constant": float(data)}
    if callable(data):
        return {"callable": getattr(data, "__name__", "function")}
    return {"nodal_digest": _array_digest(np.asarray(data, dtype=float))}


def _array_digest(a):
    import hashlib

    return hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()[:16]


@dataclass(frozen=True)
class ProbeBasis:
    """Bump-modulated Fourier probes supported in an arc of the outer loop.

    Parameters
    ----------
    arc : control arc S on the outer parameter, ``(0, 1)`` for the full loop
    count : number of probes
    ndof : 1 for scalar probes, 2 for vector probes (component ``j % 2`` of
        profile ``j // 2``)
    bound : optional N; each probe is then scaled to discrete boundary
        L2 norm ``N``
    """

    arc: tuple = FULL_ARC
    count: int = DEFAULT_PROBES
    ndof: int = 1
    bound: Optional[float] = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("probe basis needs at least one probe")
        if self.bound is not None and not self.bound > 0:
            raise ValueError("probe bound N must be positive")

    @property
    def id(self):
        b = "none" if self.bound is None else f"{self.bound:g}"
        return f"bump-fourier:arc={self.arc[0]:g}-{self.arc[1]:g}:n={self.count}:ndof={self.ndof}:N={b}"

    def labels(self):
        return [f"p{j}" for j in range(self.count)]

    def order(self, j):
        """Fourier order ``m`` of probe ``j``."""
        return (self._profile(j)[0] + 1) // 2

    def sobolev_weights(self):
        """``(1 + m)^(-1/2)``: normalizes probe ``j`` to roughly unit ``H^(1/2)`` size."""
        return np.array([1.0 / np.sqrt(1.0 + self.order(j)) for j in range(self.count)])

    def _profile(self, j):
        return (j // 2, j % 2) if self.ndof == 2 else (j, None)

    def raw_values(self, mesh: Mesh, j: int):
        """Unscaled probe ``j`` at outer nodes; evaluated only at nodes in the arc."""
        idx = mesh.boundary_nodes("outer")
        t = mesh.node_param[idx]
        inside = np.ones(len(t), dtype=bool) if is_full_arc(self.arc) else in_arc(t, self.arc)
        prof = np.zeros(len(t))
        index, comp = self._profile(j)
        prof[inside] = probe_profile(t[inside], self.arc, index)
        if self.ndof == 1:
            return prof
        out = np.zeros((len(t), 2))
        out[:, comp] = prof
        return out

    def scale(self, mesh: Mesh, j: int):
        if self.bound is None:
            return 1.0
        return self.bound / boundary_norm(mesh, self.raw_values(mesh, j))

    def values(self, mesh: Mesh, j: int):
        return self.scale(mesh, j) * self.raw_values(mesh, j)

    def all_values(self, mesh: Mesh):
        return [self.values(mesh, j) for j in range(self.count)]

    def function(self, mesh: Mesh, j: int) -> BoundaryFunction:
        index, comp = self._profile(j)
        return closed_form("probe", "outer", arc=list(self.arc), index=index, component=comp, scale=self.scale(mesh, j))

    def to_dict(self):
        return {"arc": list(self.arc), "count": self.count, "ndof": self.ndof, "bound": self.bound}


def boundary_norm(mesh: Mesh, values, loop="outer"):
    """Discrete ``L2`` norm ``sqrt(v' M v)`` of nodal data on one loop."""
    v = np.asarray(values, dtype=float)
    ndof = 1 if v.ndim == 1 else v.shape[1]
    d = dofs_of(mesh.boundary_nodes(loop), ndof)
    M = assemble_boundary_mass(mesh, loop, ndof).tocsr()[d][:, d]
    x = v.ravel()
    return float(np.sqrt(x @ (M @ x)))


@dataclass
class DtnResponse:
    flux: np.ndarray  # on measurement nodes, (n,) or (n, 2)
    solution: SignoriniSolution

    @property
    def contact_size(self):
        return self.solution.contact_size


def apply_dtn(template: SignoriniProblem, probe) -> DtnResponse:
    """Solve the Signorini problem with Dirichlet datum ``probe`` and measure on R."""
    mesh = template.mesh
    ndof = template.ndof
    f = as_nodal(probe, mesh, "outer", ndof)
    ctrl = mesh.boundary_nodes("outer")
    outside = ~(in_arc(mesh.node_param[ctrl], mesh.control_arc) | is_full_arc(mesh.control_arc))
    if np.abs(np.asarray(f)[outside]).max(initial=0.0) > 0:
        raise ValueError("probe is not supported in the control arc")
    sol = solve_signorini(replace(template, dirichlet=f))
    K = assemble_stiffness(mesh, template.physics)
    q = consistent_flux(mesh, K, sol.field, np.zeros(K.shape[0]), "outer", ndof)
    return DtnResponse(_restrict(mesh, q, "measurement"), sol)


def _restrict(mesh, q, selector):
    loop_nodes = mesh.boundary_nodes("outer")
    pos = {int(n): k for k, n in enumerate(loop_nodes)}
    sel = np.array([pos[int(n)] for n in mesh.boundary_nodes(selector)], dtype=np.int64)
    return q[sel]


@dataclass
class DtnMatrix:
    """Per-probe responses; column ``j`` holds the flattened flux of probe ``j`` on R."""

    values: np.ndarray
    labels: list
    metadata: dict = field(default_factory=dict)

    @property
    def linear(self):
        return bool(self.metadata.get("linear", False))

    def to_csv(self, path=None):
        buf = io.StringIO()
        for k, v in self.metadata.items():
            buf.write(f"# {k}: {json.dumps(v, sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row"] + list(self.labels))
        for i, row in enumerate(self.values):
            w.writerow([i] + [repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        meta, rows = {}, []
        with open(path) as fh:
            lines = fh.read().splitlines()
        body = []
        for ln in lines:
            if ln.startswith("# "):
                k, v = ln[2:].split(": ", 1)
                meta[k] = json.loads(v)
            else:
                body.append(ln)
        r = csv.reader(body)
        header = next(r)
        for row in r:
            rows.append([float(x) for x in row[1:]])
        return cls(np.array(rows).reshape(len(rows), len(header) - 1), header[1:], meta)


def assemble_dtn_matrix(template: SignoriniProblem, basis: ProbeBasis, return_responses=False):
    """Apply the DtN map to every probe (independent solves, kept in probe order)."""
    mesh = template.mesh
    if basis.ndof != template.ndof:
        raise ValueError(f"probe basis has {basis.ndof} components, problem needs {template.ndof}")
    responses = [apply_dtn(template, basis.values(mesh, j)) for j in range(basis.count)]
    cols = np.column_stack([r.flux.ravel() for r in responses])
    sizes = [int(r.contact_size) for r in responses]
    meta = {
        "mesh_digest": mesh.digest(),
        "physics": physics_descriptor(template.physics),
        "obstacle_function": describe(template.obstacle),
        "neumann_arc": None if template.neumann_arc is None else list(template.neumann_arc),
        "basis": basis.id,
        "control_arc": list(mesh.control_arc),
        "measurement_arc": list(mesh.measurement_arc),
        "contact_sizes": sizes,
        "linear": all(s == 0 for s in sizes),
    }
    meta["galerkin"] = galerkin_matrix(mesh, basis, cols).tolist()
    D = DtnMatrix(cols, basis.labels(), meta)
    return (D, responses) if return_responses else D


def galerkin_matrix(mesh: Mesh, basis: ProbeBasis, values):
    """Sobolev-weighted test-probe matrix ``W_R (T_R' M_R Q) W_S``.

    ``T_R`` holds the same probe family on the measurement arc R, ``Q`` the
    measured responses (columns of ``values``) and ``W`` the ``H^(1/2)``
    normalizations of :meth:`ProbeBasis.sobolev_weights`. It represents the
    map between ``H^(1/2)`` data and ``H^(-1/2)`` fluxes on the probe spaces,
    which removes the high-frequency part of the nodal discretization error.
    """
    ndof = basis.ndof
    test = ProbeBasis(tuple(mesh.measurement_arc), basis.count, ndof)
    nodes = mesh.boundary_nodes("measurement")
    d = dofs_of(nodes, ndof)
    M = assemble_boundary_mass(mesh, "measurement", ndof).tocsr()[d][:, d]
    T = np.column_stack([_restrict(mesh, test.raw_values(mesh, j), "measurement").ravel() for j in range(test.count)])
    w_r, w_s = test.sobolev_weights(), basis.sobolev_weights()
    return (w_r[:, None] * (T.T @ (M @ np.asarray(values)))) * w_s[None, :]


def mass_weighted(D: DtnMatrix, mesh: Mesh, basis: ProbeBasis):
    """Probe-space matrix ``P_R' M_R Q`` pairing responses with the probes themselves.

    Requires probes to be defined on R (e.g. S = R = the full loop).
    """
    ndof = basis.ndof
    nodes = mesh.boundary_nodes("measurement")
    d = dofs_of(nodes, ndof)
    M = assemble_boundary_mass(mesh, "measurement", ndof).tocsr()[d][:, d]
    P = np.column_stack([_restrict(mesh, basis.values(mesh, j), "measurement").ravel() for j in range(basis.count)])
    return P.T @ (M @ D.values)


def compare_dtn(A: DtnMatrix, B: DtnMatrix):
    """Max-norm, relative Frobenius and per-probe differences of two DtN tables."""
    if A.values.shape != B.values.shape or list(A.labels) != list(B.labels):
        raise ValueError("DtN tables use different probes or measurement nodes")
    if A.metadata.get("basis") != B.metadata.get("basis"):
        raise ValueError("DtN tables use different probe bases")
    diff = A.values - B.values
    denom = max(np.linalg.norm(A.values), np.linalg.norm(B.values))
    fro = float(np.linalg.norm(diff) / denom) if denom > 0 else 0.0
    per = np.abs(diff).max(axis=0) if diff.size else np.zeros(0)
    out = {
        "max_abs": float(np.abs(diff).max(initial=0.0)),
        "fro_rel": fro,
        "per_probe": dict(zip(A.labels, per.tolist())),
    }
    if "galerkin" in A.metadata and "galerkin" in B.metadata:
        ga, gb = np.asarray(A.metadata["galerkin"]), np.asarray(B.metadata["galerkin"])
        den = max(np.linalg.norm(ga), np.linalg.norm(gb))
        out["weighted_rel"] = float(np.linalg.norm(ga - gb) / den) if den > 0 else 0.0
    return out
