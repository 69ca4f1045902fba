import math

import numpy as np
import pytest

from rlmesh.geometry import Polygon
from rlmesh.mesh_state import CONSTANT, InvalidSizeField, SizeField, build_state, eval_size

PENTAGON = Polygon([(math.cos(2 * math.pi * k / 5), math.sin(2 * math.pi * k / 5)) for k in range(5)])
EXAMPLE_BOUNDARY = [(0, 0), (4, 0.5), (3, 3), (1.5, 4), (-1, 3), (-2, 1)]
EXAMPLE_INTERIOR = [(1, 1.5), (0, 2.5), (2.5, 1.5), (2, 2)]


def test_pentagon_vertices_only():
    s = build_state(PENTAGON.vertices, PENTAGON)
    assert s.boundary.tolist() == [True] * 5
    assert len(s.triangles) == 3


def test_pentagon_interior_point():
    s = build_state(np.vstack([PENTAGON.vertices, [[0.1, 0.0]]]), PENTAGON)
    assert s.boundary.tolist() == [True] * 5 + [False]
    assert len(s.triangles) == 5


def test_worked_example_flags():
    poly = Polygon(EXAMPLE_BOUNDARY)
    s = build_state(EXAMPLE_BOUNDARY + EXAMPLE_INTERIOR, poly)
    assert s.boundary.tolist() == [True] * 6 + [False] * 4


def test_rebuild_idempotent(rng):
    poly = Polygon(EXAMPLE_BOUNDARY)
    pts = np.vstack([EXAMPLE_BOUNDARY, EXAMPLE_INTERIOR])
    a = build_state(pts, poly)
    b = build_state(a.points, poly)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.boundary, b.boundary)
    # flags depend on geometry only, not on point order
    perm = rng.permutation(len(pts))
    c = build_state(pts[perm], poly)
    assert np.array_equal(c.boundary, a.boundary[perm])


def test_state_arrays_frozen():
    s = build_state(PENTAGON.vertices, PENTAGON)
    with pytest.raises(ValueError):
        s.points[0, 0] = 5.0


def test_boundary_edge_mask_excludes_chords():
    # square with its diagonal: the diagonal joins two boundary nodes but is interior
    sq = Polygon([(0, 0), (1, 0), (1, 1), (0, 1)])
    s = build_state(sq.vertices, sq)
    assert s.boundary_edge_mask.sum() == 4
    assert (~s.boundary_edge_mask).sum() == 1


def test_boundary_gamma_corners_and_chain():
    sq = Polygon([(0, 0), (2, 0), (2, 2), (0, 2)], [(0, 0), (1, 0), (2, 0), (2, 2), (0, 2)])
    s = build_state(sq.boundary_points, sq)
    assert s.boundary_gamma == pytest.approx([math.pi / 2, math.pi, math.pi / 2, math.pi / 2, math.pi / 2])


def test_size_fields():
    chip = SizeField("chip", (40.0,))
    ring = SizeField("ring", (5.0, 4.0, 20.0))
    assert eval_size(chip, (0, 0)) == 1.0
    assert eval_size(chip, (40, 0)) == pytest.approx(2.0)
    assert eval_size(ring, (10, 0)) == pytest.approx(1.0)
    assert eval_size(ring, (0, 0)) == pytest.approx(5.0)
    assert eval_size(CONSTANT, (123.0, -7.0)) == 1.0


def test_user_table_nearest():
    f = SizeField("user-table", table_points=np.array([[0.0, 0], [10, 0]]), table_values=np.array([1.0, 3.0]))
    assert f(np.array([[1.0, 1], [9, 0], [6, 0]])).tolist() == [1.0, 3.0, 3.0]


def test_invalid_size_fields():
    with pytest.raises(InvalidSizeField):
        SizeField("ring", (1.0, 2.0, 20.0))
    with pytest.raises(InvalidSizeField):
        SizeField("constant", (0.0,))
    with pytest.raises(InvalidSizeField):
        SizeField("spiral")
    with pytest.raises(InvalidSizeField):
        SizeField("user-table", table_points=np.zeros((1, 2)), table_values=np.array([-1.0]))
