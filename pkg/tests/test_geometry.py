import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from signolab.geometry import (
    EDGE_TAGS,
    OBSTACLE,
    OUTER_OTHER,
    OUTER_R,
    OUTER_S,
    Circle,
    ClearanceError,
    DegenerateShapeError,
    DomainSpec,
    Ellipse,
    Polygon,
    arc_local,
    build_annular_mesh,
    in_arc,
    read_mesh,
    refine_mesh,
    replace_triangles,
    reverse_obstacle_normals,
    shape_from_dict,
    square,
    validate_mesh,
    write_mesh,
)

from conftest import annulus


def test_disc_without_obstacle_has_one_loop():
    m = build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), None, 0.5))
    assert len(m.loops()) == 1
    assert (m.areas() > 0).all()
    assert len(m.boundary_nodes("obstacle")) == 0
    assert validate_mesh(m) == []


def test_annulus_area(coarse):
    exact = np.pi * (1 - 0.09)
    assert len(coarse.loops()) == 2
    assert abs(coarse.areas().sum() - exact) <= 0.02 * exact


def test_obstacle_too_close_raises_clearance_error():
    with pytest.raises(ClearanceError):
        build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), Circle((0, 0), 0.99), 0.1))


def test_obstacle_outside_outer_raises():
    with pytest.raises(ClearanceError):
        build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), Circle((0.9, 0), 0.3), 0.1))


def test_degenerate_shapes():
    with pytest.raises(DegenerateShapeError):
        Circle((0, 0), 0.0)
    with pytest.raises(DegenerateShapeError):
        Ellipse((0, 0), (0.2, -0.1))
    with pytest.raises(DegenerateShapeError):
        Polygon(((0, 0), (1, 0), (2, 0)))


def test_refinement_counts_and_area(coarse):
    fine = refine_mesh(coarse)
    assert fine.n_nodes > coarse.n_nodes
    assert len(fine.triangles) == 4 * len(coarse.triangles)
    exact = np.pi * (1 - 0.09)
    assert abs(fine.areas().sum() - exact) < abs(coarse.areas().sum() - exact)
    # parent nodes keep their indices
    np.testing.assert_array_equal(fine.nodes[: coarse.n_nodes], coarse.nodes)
    assert validate_mesh(fine) == []


def test_refinement_halves_edges(coarse):
    h = coarse.h_max
    once = refine_mesh(coarse)
    twice = refine_mesh(once)
    assert once.h_max <= 0.5 * h + h**2
    assert twice.h_max <= 0.25 * h + 2 * h**2


def test_refinement_is_deterministic(coarse):
    assert refine_mesh(coarse) == refine_mesh(annulus(0.1))


def test_validate_reports_flipped_triangle(coarse):
    tris = coarse.triangles.copy()
    tris[5] = tris[5][[0, 2, 1]]
    problems = validate_mesh(replace_triangles(coarse, tris))
    assert any(p.startswith("triangle 5 ") and "non-positive signed area" in p for p in problems)


def test_validate_reports_reversed_obstacle_normals(coarse):
    problems = validate_mesh(reverse_obstacle_normals(coarse))
    assert any("normal orientation failure" in p for p in problems)


def test_normals_match_radial_normals(coarse):
    for loop, sign, center in (("outer", 1.0, np.zeros(2)), ("obstacle", -1.0, np.zeros(2))):
        e = coarse.edge_mask(loop)
        a, b = coarse.boundary_edges[e].T
        mid = 0.5 * (coarse.nodes[a] + coarse.nodes[b])
        radial = sign * (mid - center) / np.linalg.norm(mid - center, axis=1, keepdims=True)
        h = np.linalg.norm(coarse.nodes[b] - coarse.nodes[a], axis=1).max()
        assert np.abs(coarse.edge_normals[e] - radial).max() <= 10 * h**2


def test_obstacle_node_normals_point_into_obstacle(coarse):
    idx = coarse.boundary_nodes("obstacle")
    nu = coarse.node_normals("obstacle")
    inward = -coarse.nodes[idx] / np.linalg.norm(coarse.nodes[idx], axis=1, keepdims=True)
    np.testing.assert_allclose(nu, inward, atol=1e-12)


def test_tag_partition():
    m = annulus(0.1, control_arc=(0.0, 0.4), measurement_arc=(0.3, 0.7))
    assert set(m.edge_tags) <= set(EDGE_TAGS)
    outer = m.edge_mask("outer")
    assert (m.edge_tags[~outer] == OBSTACLE).all()
    assert (m.edge_tags[outer] != OBSTACLE).all()
    assert {OUTER_S, OUTER_R, OUTER_OTHER} <= set(m.edge_tags[outer])
    t = m.edge_params()
    s_only = outer & in_arc(t, (0.0, 0.3), tol=-1e-9)
    assert (m.edge_tags[s_only] == OUTER_S).all()


def test_wraparound_arc():
    t = np.array([0.05, 0.5, 0.95])
    np.testing.assert_array_equal(in_arc(t, (0.9, 1.1)), [True, False, True])
    np.testing.assert_allclose(arc_local(np.array([0.9, 0.0, 0.1]), (0.9, 1.1)), [0.0, 0.5, 1.0], atol=1e-12)


def test_mesh_round_trip(tmp_path, coarse):
    p = tmp_path / "mesh.txt"
    write_mesh(p, coarse)
    back = read_mesh(p)
    assert back == coarse
    np.testing.assert_array_equal(back.node_param[coarse.boundary_nodes("outer")],
                                  coarse.node_param[coarse.boundary_nodes("outer")])
    assert back.digest() == coarse.digest()
    assert validate_mesh(back) == []


def test_shape_dict_round_trip():
    for s in (Circle((0.1, 0.2), 0.3), Ellipse((0, 0), (0.2, 0.1), 0.3), square((0.3, 0), 0.2)):
        assert shape_from_dict(s.to_dict()) == s
    spec = DomainSpec(Circle((0, 0), 1), square((0.2, 0), 0.3), 0.1, (0.0, 0.5), (0.25, 0.75))
    assert DomainSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize("obstacle", [square((0.3, 0.0), 0.2), Ellipse((0.3, 0.0), (0.2, 0.12)),
                                      Polygon(((-0.2, -0.1), (0.25, -0.15), (0.1, 0.3)))])
def test_other_obstacles_mesh_cleanly(obstacle):
    m = build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), obstacle, 0.08))
    assert validate_mesh(m) == []
    assert abs(m.areas().sum() - (np.pi - obstacle.area)) <= 0.02 * np.pi


@given(cx=st.floats(-0.3, 0.3), cy=st.floats(-0.3, 0.3), r=st.floats(0.1, 0.35))
def test_random_disc_obstacles_give_valid_meshes(cx, cy, r):
    # stay inside the 2h clearance precondition (with a margin for the polyline distance)
    assume(1.0 - np.hypot(cx, cy) - r >= 2 * 0.15 + 0.01)
    m = build_annular_mesh(DomainSpec(Circle((0, 0), 1.0), Circle((cx, cy), r), 0.15))
    assert validate_mesh(m) == []
    exact = np.pi * (1 - r * r)
    assert abs(m.areas().sum() - exact) <= 0.03 * exact
