"""Boundary data: Fourier series, nodal tables and named closed-form families."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Mesh, arc_local, in_arc, is_full_arc

CLOSED_FORMS = (
    "constant",
    "fundamental_solution",
    "harmonic_polynomial",
    "lame_annulus",
    "rigid_motion",
    "normal_field",
    "probe",
    "arc_bump",
)

MAX_FOURIER_ORDER = 64


@dataclass
class BoundaryFunction:
    """Scalar or vector data on one boundary loop.

    Parameters
    ----------
    kind : {"fourier", "nodal", "closed_form"}
    target : {"outer", "obstacle"}
    params : dict
        ``fourier``: ``a0``, ``a`` (cosine coefficients, k >= 1), ``b`` (sine);
        a vector field is given as ``components=[{...}, {...}]``.
        ``nodal``: ``values`` ordered like ``mesh.boundary_nodes(target)``.
        ``closed_form``: ``name`` plus the family parameters.
    """

    kind: str
    target: str = "outer"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("fourier", "nodal", "closed_form"):
            raise ValueError(f"unknown boundary function kind {self.kind!r}")
        if self.target not in ("outer", "obstacle"):
            raise ValueError(f"boundary function target must be 'outer' or 'obstacle', got {self.target!r}")
        if self.kind == "fourier":
            for comp in self.params.get("components", [self.params]):
                order = max(len(comp.get("a", ())), len(comp.get("b", ())))
                if order > MAX_FOURIER_ORDER:
                    raise ValueError(f"fourier order {order} exceeds {MAX_FOURIER_ORDER}")
        if self.kind == "closed_form" and self.params.get("name") not in CLOSED_FORMS:
            raise ValueError(f"unknown closed-form family {self.params.get('name')!r}")

    def scaled(self, factor):
        """Return ``factor * self`` (nodal and closed forms with a ``scale`` key)."""
        p = dict(self.params)
        if self.kind == "nodal":
            p["values"] = factor * np.asarray(p["values"])
        elif self.kind == "fourier":
            comps = p.get("components")
            if comps is None:
                p = _scale_fourier(p, factor)
            else:
                p["components"] = [_scale_fourier(c, factor) for c in comps]
        else:
            p["scale"] = factor * p.get("scale", 1.0)
        return BoundaryFunction(self.kind, self.target, p)

    def to_dict(self):
        p = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "target": self.target, "params": p}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d.get("target", "outer"), dict(d.get("params", {})))


def _scale_fourier(p, factor):
    return {
        "a0": factor * p.get("a0", 0.0),
        "a": [factor * x for x in p.get("a", ())],
        "b": [factor * x for x in p.get("b", ())],
    }


def fourier(a0=0.0, a=(), b=(), target="outer"):
    return BoundaryFunction("fourier", target, {"a0": a0, "a": list(a), "b": list(b)})


def nodal(values, target="outer"):
    return BoundaryFunction("nodal", target, {"values": np.asarray(values, dtype=float)})


def closed_form(name, target="outer", **params):
    return BoundaryFunction("closed_form", target, {"name": name, **params})


def constant(value, target="outer"):
    return closed_form("constant", target, value=value)


# ---------------------------------------------------------------------------
# point-evaluable closed forms


@dataclass(frozen=True)
class FundamentalSolution:
    """Fundamental solution of the Laplacian in the plane, ``-log|x - z| / (2 pi)``."""

    pole: tuple

    def value(self, x):
        x = np.atleast_2d(x)
        return -np.log(np.linalg.norm(x - np.asarray(self.pole), axis=1)) / (2 * np.pi)

    def gradient(self, x):
        x = np.atleast_2d(x)
        d = x - np.asarray(self.pole)
        return -d / (2 * np.pi * (d**2).sum(axis=1, keepdims=True))


def harmonic_polynomial(x, degree=2, part="re", center=(0.0, 0.0)):
    z = (x[:, 0] - center[0]) + 1j * (x[:, 1] - center[1])
    w = z**degree
    return w.real if part == "re" else w.imag


def harmonic_polynomial_gradient(x, degree=2, part="re", center=(0.0, 0.0)):
    z = (x[:, 0] - center[0]) + 1j * (x[:, 1] - center[1])
    dw = degree * z ** (degree - 1) if degree > 0 else 0 * z
    # f = Re w: grad = (Re w', -Im w'); f = Im w: grad = (Im w', Re w')
    if part == "re":
        return np.stack([dw.real, -dw.imag], axis=1)
    return np.stack([dw.imag, dw.real], axis=1)


def lame_annulus_displacement(x, A, B, center=(0.0, 0.0)):
    """Radial displacement ``(A r + B / r) e_r`` of a thick cylinder."""
    d = np.atleast_2d(x) - np.asarray(center)
    r2 = (d**2).sum(axis=1, keepdims=True)
    return (A + B / r2) * d


def lame_annulus_stress(x, A, B, mu, lam, center=(0.0, 0.0)):
    """Stress tensors (n, 2, 2) of the radial thick-cylinder solution."""
    d = np.atleast_2d(x) - np.asarray(center)
    r2 = (d**2).sum(axis=1)
    # grad u = A I + B (I / r^2 - 2 d d^T / r^4)
    eye = np.eye(2)[None]
    g = A * eye + B * (eye / r2[:, None, None] - 2 * np.einsum("ni,nj->nij", d, d) / (r2**2)[:, None, None])
    eps = 0.5 * (g + np.transpose(g, (0, 2, 1)))
    tr = np.trace(eps, axis1=1, axis2=2)
    return 2 * mu * eps + lam * tr[:, None, None] * eye


def rigid_motion(x, rotation=0.0, translation=(0.0, 0.0)):
    """Infinitesimal rigid motion ``A x + c`` with ``A = [[0, -a], [a, 0]]``."""
    x = np.atleast_2d(x)
    return np.stack([-rotation * x[:, 1], rotation * x[:, 0]], axis=1) + np.asarray(translation)


def bump(s):
    """Smooth bump on [0, 1], vanishing with all derivatives at the endpoints."""
    s = np.asarray(s, dtype=float)
    y = 2 * s - 1
    out = np.zeros_like(y)
    m = np.abs(y) < 1
    out[m] = np.exp(1 - 1 / (1 - y[m] ** 2))
    return out


def probe_profile(t, arc, index):
    """Scalar profile of probe ``index`` on the arc (curve parameter ``t``).

    On a full loop the profiles are plain Fourier modes 1, cos, sin, ...; on
    a proper arc they are a smooth bump times full-period modes
    ``cos(2 pi m s)``, ``sin(2 pi m s)`` in the local arc coordinate ``s``, so
    they vanish outside the arc and stay well separated.
    """
    m = (index + 1) // 2
    if is_full_arc(arc):
        a = 2 * np.pi * np.asarray(t)
        if index == 0:
            return np.ones_like(a)
        return np.cos(m * a) if index % 2 == 1 else np.sin(m * a)
    s = arc_local(t, arc)
    inside = in_arc(t, arc)
    base = np.where(inside, bump(np.clip(s, 0, 1)), 0.0)
    if index == 0:
        return base
    mode = np.cos(2 * np.pi * m * s) if index % 2 == 1 else np.sin(2 * np.pi * m * s)
    return base * mode


def _point_closed_form(name, p, x, ndof):
    scale = p.get("scale", 1.0)
    if name == "constant":
        v = np.asarray(p.get("value", 0.0), dtype=float)
        if v.ndim == 0:
            return scale * np.full(len(x), float(v))
        return scale * np.tile(v, (len(x), 1))
    if name == "fundamental_solution":
        return scale * FundamentalSolution(tuple(p["z"])).value(x)
    if name == "harmonic_polynomial":
        return scale * harmonic_polynomial(x, p.get("degree", 2), p.get("part", "re"), tuple(p.get("center", (0, 0))))
    if name == "lame_annulus":
        return scale * lame_annulus_displacement(x, p["A"], p["B"], tuple(p.get("center", (0, 0))))
    if name == "rigid_motion":
        return scale * rigid_motion(x, p.get("rotation", 0.0), tuple(p.get("translation", (0.0, 0.0))))
    return None


def evaluate_boundary_function(bf: BoundaryFunction, mesh: Mesh):
    """Nodal values on ``mesh.boundary_nodes(bf.target)``.

    Returns an array of shape (n,) for scalar data or (n, 2) for vector data.
    """
    idx = mesh.boundary_nodes(bf.target)
    x = mesh.nodes[idx]
    t = mesh.node_param[idx]
    curve = mesh.outer if bf.target == "outer" else mesh.obstacle
    if bf.kind == "nodal":
        v = np.asarray(bf.params["values"], dtype=float)
        if len(v) != len(idx):
            raise ValueError(f"nodal data has {len(v)} values, target {bf.target!r} has {len(idx)} nodes")
        return v.copy()
    if bf.kind == "fourier":
        s = curve.arclength_fraction(t) if curve is not None else t
        comps = bf.params.get("components")
        if comps is None:
            return _fourier_eval(bf.params, s)
        return np.stack([_fourier_eval(c, s) for c in comps], axis=1)
    p = bf.params
    name = p["name"]
    v = _point_closed_form(name, p, x, None)
    if v is not None:
        return v
    scale = p.get("scale", 1.0)
    if name == "normal_field":
        return scale * p.get("magnitude", 1.0) * mesh.node_normals(bf.target)
    if name == "probe":
        prof = probe_profile(t, tuple(p["arc"]), int(p["index"]))
        comp = p.get("component")
        if comp is None:
            return scale * prof
        out = np.zeros((len(t), 2))
        out[:, int(comp)] = prof
        return scale * out
    if name == "arc_bump":
        prof = np.where(in_arc(t, tuple(p["arc"])), bump(np.clip(arc_local(t, tuple(p["arc"])), 0, 1)), 0.0)
        return scale * (p.get("base", 0.0) + p.get("amplitude", 1.0) * prof)
    raise ValueError(f"closed form {name!r} cannot be evaluated on a mesh")


def point_evaluator(bf: BoundaryFunction):
    """Callable ``f(x) -> values`` for coordinate-based closed forms, else None."""
    if bf.kind != "closed_form" or bf.params["name"] not in (
        "constant", "fundamental_solution", "harmonic_polynomial", "lame_annulus", "rigid_motion"
    ):
        return None
    p, name = bf.params, bf.params["name"]
    return lambda x: _point_closed_form(name, p, np.atleast_2d(x), None)


def _fourier_eval(p, s):
    s = np.asarray(s, dtype=float)
    out = np.full(s.shape, float(p.get("a0", 0.0)))
    for k, ak in enumerate(p.get("a", ()), start=1):
        out += ak * np.cos(2 * np.pi * k * s)
    for k, bk in enumerate(p.get("b", ()), start=1):
        out += bk * np.sin(2 * np.pi * k * s)
    return out


def as_nodal(data, mesh: Mesh, target: str, ndof: int = 1):
    """Coerce boundary data (function, scalar, array or callable) to nodal values."""
    idx = mesh.boundary_nodes(target)
    if data is None:
        return np.zeros(len(idx)) if ndof == 1 else np.zeros((len(idx), ndof))
    if isinstance(data, BoundaryFunction):
        if data.target != target:
            raise ValueError(f"boundary function targets {data.target!r}, expected {target!r}")
        v = evaluate_boundary_function(data, mesh)
    elif callable(data):
        v = np.asarray(data(mesh.nodes[idx]), dtype=float)
    else:
        v = np.asarray(data, dtype=float)
        if v.ndim == 0:
            v = np.full(len(idx), float(v)) if ndof == 1 else np.tile(np.full(ndof, float(v)), (len(idx), 1))
    if ndof == 1 and v.shape != (len(idx),) or ndof > 1 and v.shape != (len(idx), ndof):
        raise ValueError(f"boundary data shape {v.shape} does not match {len(idx)} nodes x {ndof} components")
    return v
