"""
Annular domains and their triangulations.

Boundary curves are stored analytically next to the mesh so that uniform
refinement can push new boundary nodes back onto the true curve. Every
boundary node carries the curve parameter ``t`` in ``[0, 1)`` it was
generated from.

Meshes are built by a layered construction: rings are interpolated between
the obstacle curve and the outer curve and consecutive rings are zipped
together by triangles.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

OUTER_S = "OUTER_S"
OUTER_R = "OUTER_R"
OUTER_OTHER = "OUTER_OTHER"
OBSTACLE = "OBSTACLE"
EDGE_TAGS = (OUTER_S, OUTER_R, OUTER_OTHER, OBSTACLE)

INTERIOR, ON_OUTER, ON_OBSTACLE = -1, 0, 1

FULL_ARC = (0.0, 1.0)


class MeshError(ValueError):
    pass


class ClearanceError(MeshError):
    """Obstacle touches or comes too close to the outer boundary."""


class DegenerateShapeError(MeshError):
    """Self-intersecting, zero-area or otherwise unusable shape."""


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class Circle:
    center: tuple = (0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise DegenerateShapeError(f"circle radius must be positive, got {self.radius}")

    def point(self, t):
        t = np.asarray(t, dtype=float)
        a = 2 * np.pi * t
        c = np.asarray(self.center, dtype=float)
        return np.stack([c[0] + self.radius * np.cos(a), c[1] + self.radius * np.sin(a)], axis=-1)

    def normal(self, t):
        """Unit normal pointing out of the shape."""
        a = 2 * np.pi * np.asarray(t, dtype=float)
        return np.stack([np.cos(a), np.sin(a)], axis=-1)

    @property
    def perimeter(self):
        return 2 * np.pi * self.radius

    @property
    def centroid(self):
        return np.asarray(self.center, dtype=float)

    @property
    def area(self):
        return np.pi * self.radius**2

    def arclength_fraction(self, t):
        return np.asarray(t, dtype=float) % 1.0

    def breakpoints(self):
        return np.zeros(0)

    def is_convex(self):
        return True

    def to_dict(self):
        return {"type": "circle", "center": [float(c) for c in self.center], "radius": float(self.radius)}


@dataclass(frozen=True)
class Ellipse:
    center: tuple = (0.0, 0.0)
    semi_axes: tuple = (1.0, 0.5)
    rotation: float = 0.0

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise DegenerateShapeError(f"ellipse semi-axes must be positive, got {self.semi_axes}")

    def _rot(self):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return np.array([[c, -s], [s, c]])

    def point(self, t):
        a = 2 * np.pi * np.asarray(t, dtype=float)
        local = np.stack([self.semi_axes[0] * np.cos(a), self.semi_axes[1] * np.sin(a)], axis=-1)
        return local @ self._rot().T + np.asarray(self.center, dtype=float)

    def normal(self, t):
        a = 2 * np.pi * np.asarray(t, dtype=float)
        local = np.stack([self.semi_axes[1] * np.cos(a), self.semi_axes[0] * np.sin(a)], axis=-1)
        n = local @ self._rot().T
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def _arclength_table(self):
        ts = np.linspace(0.0, 1.0, 4097)
        p = self.point(ts)
        seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
        return ts, np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def perimeter(self):
        return float(self._arclength_table()[1][-1])

    @property
    def centroid(self):
        return np.asarray(self.center, dtype=float)

    @property
    def area(self):
        return np.pi * self.semi_axes[0] * self.semi_axes[1]

    def arclength_fraction(self, t):
        ts, s = self._arclength_table()
        t = np.asarray(t, dtype=float) % 1.0
        return np.interp(t, ts, s / s[-1])

    def breakpoints(self):
        return np.zeros(0)

    def is_convex(self):
        return True

    def to_dict(self):
        return {
            "type": "ellipse",
            "center": [float(c) for c in self.center],
            "semi_axes": [float(a) for a in self.semi_axes],
            "rotation": float(self.rotation),
        }


def _segments_cross(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


@dataclass(frozen=True)
class Polygon:
    """Closed polygon, counter-clockwise, parameterized by normalized arclength.

    The parameter origin ``t = 0`` sits where the ray from the centroid in
    the +x direction leaves the polygon, so that polygons and circles with
    the same centroid have matching parameterizations.
    """

    vertices: tuple

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise DegenerateShapeError("polygon needs at least three 2D vertices")
        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise DegenerateShapeError(f"polygon edges {i} and {j} intersect")
        if _signed_area(v) <= 0:
            raise DegenerateShapeError("polygon must be counter-clockwise with positive area")
        lens = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
        if lens.min() <= 1e-14:
            raise DegenerateShapeError("polygon has repeated vertices")

    @property
    def _v(self):
        return np.asarray(self.vertices, dtype=float)

    @property
    def centroid(self):
        v = self._v
        w = np.roll(v, -1, axis=0)
        cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a = cross.sum() / 2
        cx = ((v[:, 0] + w[:, 0]) * cross).sum() / (6 * a)
        cy = ((v[:, 1] + w[:, 1]) * cross).sum() / (6 * a)
        return np.array([cx, cy])

    @property
    def area(self):
        return _signed_area(self._v)

    @property
    def perimeter(self):
        v = self._v
        return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())

    def _table(self):
        # cumulative arclength, starting from the +x ray exit point
        v = self._v
        c = self.centroid
        n = len(v)
        w = np.roll(v, -1, axis=0)
        start_edge, start_frac = 0, 0.0
        for i in range(n):
            a, b = v[i] - c, w[i] - c
            # solve c + s*(1,0) = v_i + r*(w_i - v_i), s > 0, r in [0,1)
            d = b - a
            if abs(d[1]) < 1e-300:
                continue
            r = -a[1] / d[1]
            if 0 <= r < 1 and a[0] + r * d[0] > 0:
                start_edge, start_frac = i, r
                break
        start = v[start_edge] + start_frac * (w[start_edge] - v[start_edge])
        pts = [start] + [v[(start_edge + 1 + k) % n] for k in range(n)]
        if start_frac > 0:
            pts.append(start)
        pts = np.array(pts)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        keep = np.concatenate([[True], seg > 1e-15])
        pts = pts[keep]
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        return pts, s / s[-1]

    def point(self, t):
        pts, s = self._table()
        t = np.asarray(t, dtype=float) % 1.0
        return np.stack([np.interp(t, s, pts[:, 0]), np.interp(t, s, pts[:, 1])], axis=-1)

    def normal(self, t):
        pts, s = self._table()
        t = np.atleast_1d(np.asarray(t, dtype=float) % 1.0)
        d = np.diff(pts, axis=0)
        en = np.stack([d[:, 1], -d[:, 0]], axis=1)
        en /= np.linalg.norm(en, axis=1, keepdims=True)
        out = np.empty((len(t), 2))
        for k, tk in enumerate(t):
            hits = np.where(np.abs(s - tk) < 1e-12)[0]
            hits = hits[(hits > 0) & (hits < len(s) - 1)]
            if len(hits) or tk < 1e-12 or tk > 1 - 1e-12:
                # corner (or start point): average the two adjacent edge normals
                if tk < 1e-12 or tk > 1 - 1e-12:
                    i = 0
                    m = en[-1] + en[0]
                else:
                    i = hits[0]
                    m = en[i - 1] + en[i]
                out[k] = m / np.linalg.norm(m)
            else:
                i = min(np.searchsorted(s, tk, side="right") - 1, len(en) - 1)
                out[k] = en[i]
        return out

    def arclength_fraction(self, t):
        return np.asarray(t, dtype=float) % 1.0

    def breakpoints(self):
        """Parameters of the polygon vertices."""
        pts, s = self._table()
        v = self._v
        bps = [s[i] for i in range(len(pts) - 1) if np.min(np.linalg.norm(v - pts[i], axis=1)) < 1e-12]
        return np.array(sorted(bps))

    def is_convex(self):
        v = self._v
        n = len(v)
        for i in range(n):
            a, b, c = v[i], v[(i + 1) % n], v[(i + 2) % n]
            if (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]) < -1e-14:
                return False
        return True

    def to_dict(self):
        return {"type": "polygon", "vertices": [[float(x), float(y)] for x, y in self.vertices]}


def square(center, side):
    cx, cy = center
    s = side / 2
    return Polygon(((cx - s, cy - s), (cx + s, cy - s), (cx + s, cy + s), (cx - s, cy + s)))


def shape_from_dict(d):
    kind = d["type"]
    if kind == "circle":
        return Circle(tuple(d.get("center", (0.0, 0.0))), float(d["radius"]))
    if kind == "ellipse":
        return Ellipse(tuple(d.get("center", (0.0, 0.0))), tuple(d["semi_axes"]), float(d.get("rotation", 0.0)))
    if kind == "polygon":
        return Polygon(tuple(tuple(p) for p in d["vertices"]))
    if kind == "square":
        return square(tuple(d.get("center", (0.0, 0.0))), float(d["side"]))
    raise DegenerateShapeError(f"unknown shape type {kind!r}")


def _signed_area(v):
    w = np.roll(v, -1, axis=0)
    return 0.5 * float((v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]).sum())


def contains(shape, pts):
    """Point-in-shape test on a dense boundary polygon."""
    poly = shape.point(np.linspace(0, 1, 2049)[:-1])
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    px, py = poly[:, 0], poly[:, 1]
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    for i in range(len(poly)):
        cond = (py[i] > y) != (qy[i] > y)
        xint = px[i] + (y - py[i]) * (qx[i] - px[i]) / np.where(cond, qy[i] - py[i], 1.0)
        inside ^= cond & (x < xint)
    return inside


def _distance_to_polyline(pts, poly):
    a = poly
    b = np.roll(poly, -1, axis=0)
    d = b - a
    best = np.full(len(pts), np.inf)
    for i in range(len(a)):
        dd = d[i] @ d[i]
        r = np.clip(((pts - a[i]) @ d[i]) / dd, 0, 1)
        proj = a[i] + r[:, None] * d[i]
        best = np.minimum(best, np.linalg.norm(pts - proj, axis=1))
    return best


# ---------------------------------------------------------------------------
# arcs


def arc_length(arc):
    a, b = arc
    if b - a >= 1.0 - 1e-15:
        return 1.0
    return (b - a) % 1.0


def in_arc(t, arc, tol=1e-12):
    """Closed-arc membership for curve parameters ``t``."""
    length = arc_length(arc)
    if length >= 1.0:
        return np.ones(np.shape(t), dtype=bool)
    return ((np.asarray(t) - arc[0]) % 1.0) <= length + tol


def arc_local(t, arc):
    """Local coordinate in [0, 1] along the arc."""
    length = arc_length(arc)
    return ((np.asarray(t) - arc[0]) % 1.0) / length


def is_full_arc(arc):
    return arc_length(arc) >= 1.0


# ---------------------------------------------------------------------------
# domain spec and mesh


@dataclass(frozen=True)
class DomainSpec:
    outer: object
    obstacle: Optional[object] = None
    mesh_h: float = 0.1
    control_arc: tuple = FULL_ARC
    measurement_arc: Optional[tuple] = None

    @property
    def measurement(self):
        return self.control_arc if self.measurement_arc is None else self.measurement_arc

    def to_dict(self):
        return {
            "outer": self.outer.to_dict(),
            "obstacle": None if self.obstacle is None else self.obstacle.to_dict(),
            "mesh_h": float(self.mesh_h),
            "control_arc": [float(a) for a in self.control_arc],
            "measurement_arc": [float(a) for a in self.measurement],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            outer=shape_from_dict(d["outer"]),
            obstacle=None if d.get("obstacle") is None else shape_from_dict(d["obstacle"]),
            mesh_h=float(d["mesh_h"]),
            control_arc=tuple(d.get("control_arc", FULL_ARC)),
            measurement_arc=None if d.get("measurement_arc") is None else tuple(d["measurement_arc"]),
        )


def _frozen(a):
    a = np.array(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation of the region between two curves.

    Attributes
    ----------
    nodes : ndarray, shape (N, 2)
    triangles : ndarray, shape (M, 3)
        Counter-clockwise node triples.
    boundary_edges : ndarray, shape (E, 2)
        Oriented so that the adjacent triangle lies to the left.
    edge_tags : ndarray of str, shape (E,)
    edge_normals : ndarray, shape (E, 2)
        Outward unit normals of the meshed region. On the obstacle loop
        they point into the obstacle.
    node_curve : ndarray of int, shape (N,)
        ``-1`` interior, ``0`` outer boundary, ``1`` obstacle boundary.
    node_param : ndarray, shape (N,)
        Curve parameter of boundary nodes, NaN for interior nodes.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: np.ndarray
    edge_normals: np.ndarray
    node_curve: np.ndarray
    node_param: np.ndarray
    outer: object = None
    obstacle: object = None
    control_arc: tuple = FULL_ARC
    measurement_arc: tuple = FULL_ARC
    mesh_h: float = float("nan")
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for name in ("nodes", "triangles", "boundary_edges", "edge_tags", "edge_normals", "node_curve", "node_param"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def node_tags(self):
        """Per-node boundary membership: ``"INTERIOR"``, ``"OUTER"`` or ``"OBSTACLE"``."""
        names = np.array(["INTERIOR", "OUTER", "OBSTACLE"])
        return names[self.node_curve + 1]

    def areas(self):
        p = self.nodes[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self):
        e = self.unique_edges()
        return np.linalg.norm(self.nodes[e[:, 1]] - self.nodes[e[:, 0]], axis=1)

    def unique_edges(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @property
    def h_max(self):
        return float(self.edge_lengths().max())

    def edge_params(self):
        """Curve parameter of each boundary edge midpoint."""
        ta = self.node_param[self.boundary_edges[:, 0]]
        tb = self.node_param[self.boundary_edges[:, 1]]
        tb = np.where(tb < ta - 0.5, tb + 1.0, tb)
        ta2 = np.where(ta < tb - 0.5, ta + 1.0, ta)
        return ((ta2 + tb) / 2) % 1.0

    def edge_mask(self, selector):
        """Boolean mask of boundary edges.

        ``selector`` is one of ``"outer"``, ``"obstacle"``, ``"boundary"``,
        ``"control"``, ``"measurement"``, an edge tag, or an explicit arc
        ``("outer"|"obstacle", (t0, t1))``.
        """
        curve = self.node_curve[self.boundary_edges[:, 0]]
        if isinstance(selector, tuple):
            which, arc = selector
            cid = ON_OUTER if which == "outer" else ON_OBSTACLE
            ta = self.node_param[self.boundary_edges[:, 0]]
            tb = self.node_param[self.boundary_edges[:, 1]]
            return (curve == cid) & in_arc(ta, arc) & in_arc(tb, arc) & in_arc(self.edge_params(), arc)
        if selector == "boundary":
            return np.ones(len(curve), dtype=bool)
        if selector == "outer":
            return curve == ON_OUTER
        if selector == "obstacle":
            return curve == ON_OBSTACLE
        if selector == "control":
            return self.edge_mask(("outer", self.control_arc))
        if selector == "measurement":
            return self.edge_mask(("outer", self.measurement_arc))
        if selector in EDGE_TAGS:
            return self.edge_tags == selector
        raise KeyError(f"unknown boundary selector {selector!r}")

    def boundary_nodes(self, selector):
        """Sorted node indices touched by the selected boundary edges.

        Nodes are ordered by curve parameter (then by index).
        """
        key = ("bnodes", selector if not isinstance(selector, tuple) else (selector[0], tuple(selector[1])))
        if key not in self._cache:
            e = self.boundary_edges[self.edge_mask(selector)]
            idx = np.unique(e)
            order = np.lexsort((idx, self.node_param[idx]))
            self._cache[key] = _frozen(idx[order])
        return self._cache[key]

    def node_normals(self, selector="boundary"):
        """Outward unit normals (of the meshed region) at boundary nodes.

        Uses the analytic curve normal; at polygon corners the two adjacent
        edge normals are averaged.
        """
        idx = self.boundary_nodes(selector)
        out = np.zeros((len(idx), 2))
        for cid, curve, sign in ((ON_OUTER, self.outer, 1.0), (ON_OBSTACLE, self.obstacle, -1.0)):
            m = self.node_curve[idx] == cid
            if not m.any():
                continue
            if curve is not None:
                out[m] = sign * curve.normal(self.node_param[idx[m]])
            else:
                out[m] = self._averaged_normals(idx[m])
        return out

    def _averaged_normals(self, idx):
        acc = np.zeros((self.n_nodes, 2))
        lens = np.linalg.norm(self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]], axis=1)
        for k in range(2):
            np.add.at(acc, self.boundary_edges[:, k], self.edge_normals * lens[:, None])
        v = acc[idx]
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def loops(self):
        """Boundary edge loops as lists of edge indices."""
        nxt = {}
        for k, (a, b) in enumerate(self.boundary_edges):
            nxt.setdefault(int(a), []).append(k)
        seen = np.zeros(len(self.boundary_edges), dtype=bool)
        loops = []
        for k0 in range(len(self.boundary_edges)):
            if seen[k0]:
                continue
            loop, k = [], k0
            while not seen[k]:
                seen[k] = True
                loop.append(k)
                b = int(self.boundary_edges[k, 1])
                cands = [c for c in nxt.get(b, []) if not seen[c]]
                if not cands:
                    break
                k = cands[0]
            loops.append(loop)
        return loops

    def digest(self):
        import hashlib

        h = hashlib.sha256()
        for a in (self.nodes, self.triangles, self.boundary_edges):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.boundary_edges, other.boundary_edges)
            and np.array_equal(self.edge_tags, other.edge_tags)
        )

    __hash__ = None


def _ring_params(curve, n, include_breakpoints):
    if not include_breakpoints or curve is None or len(curve.breakpoints()) == 0:
        return np.arange(n) / n
    bps = list(curve.breakpoints())
    if bps[0] > 1e-12:
        bps = [0.0] + bps
    bps.append(1.0)
    out = []
    total = n
    for a, b in zip(bps[:-1], bps[1:]):
        k = max(1, int(math.ceil((b - a) * total - 1e-9)))
        out.extend(a + (b - a) * np.arange(k) / k)
    return np.array(out)


def _zip_rings(ia, ta, ib, tb, nodes):
    """Triangulate the strip between two closed rings with parameters ta, tb."""
    na, nb = len(ia), len(ib)
    tri = []
    i = j = 0
    ta_ext = np.concatenate([ta, [1.0]])
    tb_ext = np.concatenate([tb, [1.0]])
    while i < na or j < nb:
        if j == nb or (i < na and ta_ext[i + 1] <= tb_ext[j + 1]):
            t = (ia[i % na], ia[(i + 1) % na], ib[j % nb])
            i += 1
        else:
            t = (ia[i % na], ib[(j + 1) % nb], ib[j % nb])
            j += 1
        tri.append(t)
    tri = np.array(tri)
    p = nodes[tri]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    flip = area < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return tri


def _check_clearance(spec):
    h = spec.mesh_h
    obs = spec.obstacle
    if obs is None:
        return
    inner = obs.point(np.linspace(0, 1, 1025)[:-1])
    if not contains(spec.outer, inner).all():
        raise ClearanceError("obstacle is not contained in the outer shape")
    outer_poly = spec.outer.point(np.linspace(0, 1, 2049)[:-1])
    gap = _distance_to_polyline(inner, outer_poly).min()
    if gap < 2 * h:
        raise ClearanceError(f"obstacle clearance {gap:.4g} is below 2*mesh_h = {2 * h:.4g}")


def build_annular_mesh(spec: DomainSpec) -> Mesh:
    """Layered triangulation of ``outer`` minus ``obstacle``.

    Deterministic: the same spec always yields the same mesh.
    """
    h = float(spec.mesh_h)
    if not h > 0:
        raise MeshError(f"mesh_h must be positive, got {h}")
    for arc in (spec.control_arc, spec.measurement):
        if arc_length(arc) <= 0:
            raise MeshError(f"empty boundary arc {arc}")
    if spec.obstacle is not None and isinstance(spec.obstacle, Polygon) and not spec.obstacle.is_convex():
        raise DegenerateShapeError("obstacle polygon must be convex")
    _check_clearance(spec)

    outer, inner = spec.outer, spec.obstacle
    center = inner.centroid if inner is not None else spec.outer.centroid
    probe_t = np.linspace(0, 1, 513)[:-1]
    po = outer.point(probe_t)
    pi = inner.point(probe_t) if inner is not None else np.broadcast_to(center, po.shape)
    gap = np.linalg.norm(po - pi, axis=1).max()
    n_rings = max(1 if inner is not None else 2, int(math.ceil(gap / h)))

    def ring_points(s, t):
        a = outer.point(t)
        b = inner.point(t) if inner is not None else np.broadcast_to(center, a.shape)
        return (1 - s) * b + s * a

    nodes, curve_id, params, rings = [], [], [], []
    count = 0
    k0 = 0 if inner is not None else 1
    if inner is None:
        nodes.append(np.asarray(center, dtype=float)[None, :])
        curve_id.append(np.array([INTERIOR]))
        params.append(np.array([np.nan]))
        count = 1
    for k in range(k0, n_rings + 1):
        s = k / n_rings
        pts_dense = ring_points(s, probe_t)
        per = np.linalg.norm(np.diff(np.vstack([pts_dense, pts_dense[:1]]), axis=0), axis=1).sum()
        n = max(8 if k in (0, n_rings) else 6, int(math.ceil(per / h)))
        if k == 0:
            t = _ring_params(inner, n, True)
        elif k == n_rings:
            t = _ring_params(outer, n, True)
        else:
            t = np.arange(n) / n
        if k == 0:
            pts = inner.point(t)
        elif k == n_rings:
            pts = outer.point(t)
        else:
            pts = ring_points(s, t)
        idx = np.arange(count, count + len(t))
        count += len(t)
        nodes.append(pts)
        cid = ON_OBSTACLE if k == 0 else (ON_OUTER if k == n_rings else INTERIOR)
        curve_id.append(np.full(len(t), cid))
        params.append(t if cid != INTERIOR else np.full(len(t), np.nan))
        rings.append((idx, t))
    nodes = np.vstack(nodes)
    tris = []
    if inner is None:
        idx, t = rings[0]
        for j in range(len(idx)):
            tris.append([0, idx[j], idx[(j + 1) % len(idx)]])
        tris = [np.array(tris)]
    for (ia, ta), (ib, tb) in zip(rings[:-1], rings[1:]):
        tris.append(_zip_rings(ia, ta, ib, tb, nodes))
    triangles = np.vstack(tris).astype(np.int64)

    node_curve = np.concatenate(curve_id).astype(np.int64)
    node_param = np.concatenate(params)
    return _assemble_mesh(nodes, triangles, node_curve, node_param, spec.outer, spec.obstacle,
                          tuple(spec.control_arc), tuple(spec.measurement), h)


def _assemble_mesh(nodes, triangles, node_curve, node_param, outer, obstacle, control_arc, measurement_arc, h):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    bmask = counts[inv] == 1
    bedges = e[bmask]  # triangle orientation is CCW, so the triangle lies to the left
    bedges = bedges[np.lexsort((bedges[:, 1], bedges[:, 0]))]
    d = nodes[bedges[:, 1]] - nodes[bedges[:, 0]]
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    mesh = Mesh(nodes, triangles, bedges, np.array([""] * len(bedges), dtype=object), normals,
                node_curve, node_param, outer, obstacle, control_arc, measurement_arc, h)
    curve = node_curve[bedges[:, 0]]
    tags = np.where(curve == ON_OBSTACLE, OBSTACLE, OUTER_OTHER).astype(object)
    in_s = (curve == ON_OUTER) & _edge_in_arc(mesh, control_arc)
    in_r = (curve == ON_OUTER) & _edge_in_arc(mesh, measurement_arc) & ~in_s
    tags[in_s] = OUTER_S
    tags[in_r] = OUTER_R
    object.__setattr__(mesh, "edge_tags", _frozen(tags.astype(str)))
    return mesh


def _edge_in_arc(mesh, arc):
    ta = mesh.node_param[mesh.boundary_edges[:, 0]]
    tb = mesh.node_param[mesh.boundary_edges[:, 1]]
    return in_arc(ta, arc) & in_arc(tb, arc) & in_arc(mesh.edge_params(), arc)


def refine_mesh(mesh: Mesh) -> Mesh:
    """Uniform red refinement; new boundary midpoints are projected onto the curves."""
    edges = mesh.unique_edges()
    n0 = mesh.n_nodes
    lookup = {(int(a), int(b)): n0 + k for k, (a, b) in enumerate(edges)}
    mid = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    new_curve = np.full(len(edges), INTERIOR)
    new_param = np.full(len(edges), np.nan)

    bkeys = np.sort(mesh.boundary_edges, axis=1)
    emp = mesh.edge_params()
    for (a, b), tmid in zip(bkeys, emp):
        k = lookup[(int(a), int(b))] - n0
        cid = int(mesh.node_curve[a])
        new_curve[k] = cid
        new_param[k] = tmid
        curve = mesh.outer if cid == ON_OUTER else mesh.obstacle
        if curve is not None:
            mid[k] = curve.point(tmid)

    t = mesh.triangles
    m01 = np.array([lookup[tuple(sorted((int(a), int(b))))] for a, b in t[:, [0, 1]]])
    m12 = np.array([lookup[tuple(sorted((int(a), int(b))))] for a, b in t[:, [1, 2]]])
    m20 = np.array([lookup[tuple(sorted((int(a), int(b))))] for a, b in t[:, [2, 0]]])
    children = np.stack([
        np.stack([t[:, 0], m01, m20], axis=1),
        np.stack([m01, t[:, 1], m12], axis=1),
        np.stack([m20, m12, t[:, 2]], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ], axis=1).reshape(-1, 3)
    nodes = np.vstack([mesh.nodes, mid])
    node_curve = np.concatenate([mesh.node_curve, new_curve])
    node_param = np.concatenate([mesh.node_param, new_param])
    return _assemble_mesh(nodes, children.astype(np.int64), node_curve, node_param, mesh.outer, mesh.obstacle,
                          mesh.control_arc, mesh.measurement_arc, mesh.mesh_h / 2)


def validate_mesh(mesh: Mesh) -> list:
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    areas = mesh.areas()
    for k in np.where(areas <= 0)[0]:
        problems.append(f"triangle {k} has non-positive signed area {areas[k]:.3e}")

    t = mesh.triangles
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    owner = np.concatenate([np.arange(len(t))] * 3)
    key = np.sort(e, axis=1)
    uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    if (counts > 2).any():
        problems.append(f"{int((counts > 2).sum())} edges shared by more than two triangles")
    boundary_from_tris = {tuple(k) for k in uniq[counts == 1]}
    stored = {tuple(sorted(map(int, be))) for be in mesh.boundary_edges}
    if stored != boundary_from_tris:
        problems.append(
            f"boundary edge set mismatch: {len(stored - boundary_from_tris)} stored edges are not single-owner, "
            f"{len(boundary_from_tris - stored)} single-owner edges are missing"
        )

    n_loops = len(mesh.loops())
    expected = 2 if mesh.obstacle is not None or (mesh.node_curve == ON_OBSTACLE).any() else 1
    if n_loops != expected:
        problems.append(f"boundary forms {n_loops} loops, expected {expected}")

    lens = np.linalg.norm(mesh.edge_normals, axis=1)
    for k in np.where(np.abs(lens - 1) > 1e-12)[0]:
        problems.append(f"boundary edge {k} normal has length {lens[k]:.15g}")

    # normals must point away from the owning triangle
    tri_of = {}
    for edge_row, tri in zip(key, owner):
        tri_of.setdefault(tuple(edge_row), tri)
    for k, (a, b) in enumerate(mesh.boundary_edges):
        tri = tri_of.get(tuple(sorted((int(a), int(b)))))
        if tri is None:
            continue
        third = [v for v in t[tri] if v not in (a, b)]
        if not third:
            continue
        mid = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
        if np.dot(mesh.edge_normals[k], mesh.nodes[third[0]] - mid) > 0:
            problems.append(f"boundary edge {k} normal points into the meshed region")

    obs_edges = np.where(mesh.node_curve[mesh.boundary_edges[:, 0]] == ON_OBSTACLE)[0]
    if len(obs_edges):
        if mesh.obstacle is not None:
            c = mesh.obstacle.centroid
        else:
            c = mesh.nodes[np.unique(mesh.boundary_edges[obs_edges])].mean(axis=0)
        for k in obs_edges:
            a, b = mesh.boundary_edges[k]
            mid = 0.5 * (mesh.nodes[a] + mesh.nodes[b])
            if np.dot(mesh.edge_normals[k], c - mid) < 0:
                problems.append(f"obstacle edge {k}: normal orientation failure (points away from the obstacle)")

    tag_ok = np.isin(mesh.edge_tags, EDGE_TAGS)
    for k in np.where(~tag_ok)[0]:
        problems.append(f"boundary edge {k} has unknown tag {mesh.edge_tags[k]!r}")
    outer_edges = mesh.node_curve[mesh.boundary_edges[:, 0]] == ON_OUTER
    bad = outer_edges & (mesh.edge_tags == OBSTACLE) | ~outer_edges & (mesh.edge_tags != OBSTACLE)
    for k in np.where(bad & tag_ok)[0]:
        problems.append(f"boundary edge {k} tag {mesh.edge_tags[k]} does not match its loop")
    return problems


# ---------------------------------------------------------------------------
# serialization


def write_mesh(path, mesh: Mesh):
    lines = ["# signolab mesh v1", f"nodes {mesh.n_nodes}"]
    lines += [f"{i} {x:.17g} {y:.17g}" for i, (x, y) in enumerate(mesh.nodes)]
    lines.append(f"triangles {len(mesh.triangles)}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    lines.append(f"boundary_edges {len(mesh.boundary_edges)}")
    lines += [
        f"{a} {b} {tag} {nx:.17g} {ny:.17g}"
        for (a, b), tag, (nx, ny) in zip(mesh.boundary_edges, mesh.edge_tags, mesh.edge_normals)
    ]
    bn = np.where(mesh.node_curve != INTERIOR)[0]
    lines.append(f"boundary_params {len(bn)}")
    lines += [f"{i} {mesh.node_curve[i]} {mesh.node_param[i]:.17g}" for i in bn]
    domain = {
        "outer": None if mesh.outer is None else mesh.outer.to_dict(),
        "obstacle": None if mesh.obstacle is None else mesh.obstacle.to_dict(),
        "control_arc": list(mesh.control_arc),
        "measurement_arc": list(mesh.measurement_arc),
        "mesh_h": mesh.mesh_h,
    }
    lines.append("domain 1")
    lines.append(json.dumps(domain, sort_keys=True))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        raw = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    sections, pos = {}, 0
    while pos < len(raw):
        name, n = raw[pos].split()
        n = int(n)
        sections[name] = raw[pos + 1 : pos + 1 + n]
        pos += 1 + n
    nodes = np.array([[float(v) for v in ln.split()[1:3]] for ln in sections["nodes"]])
    triangles = np.array([[int(v) for v in ln.split()] for ln in sections["triangles"]], dtype=np.int64)
    be, tags, normals = [], [], []
    for ln in sections["boundary_edges"]:
        a, b, tag, nx, ny = ln.split()
        be.append((int(a), int(b)))
        tags.append(tag)
        normals.append((float(nx), float(ny)))
    node_curve = np.full(len(nodes), INTERIOR, dtype=np.int64)
    node_param = np.full(len(nodes), np.nan)
    for ln in sections.get("boundary_params", []):
        i, c, t = ln.split()
        node_curve[int(i)] = int(c)
        node_param[int(i)] = float(t)
    dom = json.loads(sections["domain"][0]) if "domain" in sections else {}
    outer = shape_from_dict(dom["outer"]) if dom.get("outer") else None
    obstacle = shape_from_dict(dom["obstacle"]) if dom.get("obstacle") else None
    return Mesh(nodes, triangles, np.array(be, dtype=np.int64), np.array(tags, dtype=str), np.array(normals),
                node_curve, node_param, outer, obstacle,
                tuple(dom.get("control_arc", FULL_ARC)), tuple(dom.get("measurement_arc", FULL_ARC)),
                float(dom.get("mesh_h", float("nan"))))


def reverse_obstacle_normals(mesh: Mesh) -> Mesh:
    """Copy of ``mesh`` with flipped obstacle normals (for diagnostics tests)."""
    normals = mesh.edge_normals.copy()
    m = mesh.node_curve[mesh.boundary_edges[:, 0]] == ON_OBSTACLE
    normals[m] *= -1
    return Mesh(mesh.nodes, mesh.triangles, mesh.boundary_edges, mesh.edge_tags, normals, mesh.node_curve,
                mesh.node_param, mesh.outer, mesh.obstacle, mesh.control_arc, mesh.measurement_arc, mesh.mesh_h)


def replace_triangles(mesh: Mesh, triangles: Sequence) -> Mesh:
    return Mesh(mesh.nodes, np.asarray(triangles), mesh.boundary_edges, mesh.edge_tags, mesh.edge_normals,
                mesh.node_curve, mesh.node_param, mesh.outer, mesh.obstacle, mesh.control_arc,
                mesh.measurement_arc, mesh.mesh_h)
