import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trackmine.core import (
    BBox,
    CameraIntrinsics,
    DegenerateInputError,
    GroundPlane,
    backproject,
    embedding_distance,
    height_above_plane,
    iou,
    iou_matrix,
    project,
)


def grid_iou(a, b):
    """Unit-cell membership count; exact for integer boxes."""
    cells_a = {(x, y) for x in range(a[0], a[0] + a[2]) for y in range(a[1], a[1] + a[3])}
    cells_b = {(x, y) for x in range(b[0], b[0] + b[2]) for y in range(b[1], b[1] + b[3])}
    return len(cells_a & cells_b) / len(cells_a | cells_b)


boxes = st.builds(
    BBox,
    st.floats(-100, 100),
    st.floats(-100, 100),
    st.floats(0.01, 200),
    st.floats(0.01, 200),
)
int_boxes = st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(1, 12), st.integers(1, 12))


class TestIou:
    def test_identity(self):
        assert iou(BBox(0, 0, 10, 10), BBox(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 10, 10), BBox(20, 20, 5, 5)) == 0.0

    def test_half_shift(self):
        a, b = (0, 0, 10, 10), (5, 0, 10, 10)
        assert grid_iou(a, b) == pytest.approx(1 / 3, abs=0)
        assert iou(BBox(*a), BBox(*b)) == pytest.approx(grid_iou(a, b), rel=1e-15)

    def test_touching_edges_do_not_overlap(self):
        assert iou(BBox(0, 0, 10, 10), BBox(10, 0, 10, 10)) == 0.0

    @given(int_boxes, int_boxes)
    def test_matches_grid_oracle(self, a, b):
        assert iou(BBox(*a), BBox(*b)) == pytest.approx(grid_iou(a, b), rel=1e-12)

    def test_symmetric_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a = BBox(*rng.uniform(-50, 50, 2), *rng.uniform(0.1, 60, 2))
            b = BBox(*rng.uniform(-50, 50, 2), *rng.uniform(0.1, 60, 2))
            assert iou(a, b) == iou(b, a)

    @given(boxes)
    def test_self_overlap_is_one(self, a):
        assert iou(a, a) == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(boxes, min_size=1, max_size=6), st.lists(boxes, min_size=1, max_size=6))
    def test_matrix_bit_identical_to_scalar(self, xs, ys):
        m = iou_matrix([b.as_tuple() for b in xs], [b.as_tuple() for b in ys])
        for i, a in enumerate(xs):
            for j, b in enumerate(ys):
                assert m[i, j] == iou(a, b)
                assert 0.0 <= m[i, j] <= 1.0


class TestBoxes:
    @pytest.mark.parametrize("args", [(0, 0, 0, 1), (0, 0, 1, -1), (math.nan, 0, 1, 1), (0, math.inf, 1, 1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            BBox(*args)

    def test_union(self):
        u = BBox(0, 0, 10, 10).union(BBox(5, -5, 10, 10))
        assert u.as_tuple() == (0, -5, 15, 15)


class TestEmbeddingDistance:
    def test_identical(self):
        assert embedding_distance([1.5, -2.0], [1.5, -2.0]) == 0.0

    def test_unit_axes(self):
        assert embedding_distance([1, 0], [0, 1]) == pytest.approx(math.sqrt(2), abs=1e-15)
        assert embedding_distance([1, 0], [0, 1], "cosine") == pytest.approx(1.0, abs=1e-15)

    def test_cosine_zero_vector(self):
        with pytest.raises(DegenerateInputError):
            embedding_distance([0, 0], [0, 1], "cosine")

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            embedding_distance([0, 0], [0, 1, 2])

    @given(st.lists(st.tuples(*(st.floats(-1e3, 1e3),) * 3), min_size=3, max_size=3).map(np.array))
    def test_triangle_inequality(self, pts):
        a, b, c = pts
        assert embedding_distance(a, c) <= embedding_distance(a, b) + embedding_distance(b, c) + 1e-9


K = CameraIntrinsics(700.0, 650.0, 320.0, 240.0, 640, 480)


class TestCamera:
    def test_principal_point(self):
        np.testing.assert_array_equal(backproject((K.cx, K.cy), 5.0, K), [0, 0, 5])

    def test_one_focal_length_off_axis(self):
        np.testing.assert_allclose(backproject((K.cx + K.fx, K.cy), 2.0, K), [2, 0, 2], atol=1e-12)
        np.testing.assert_allclose(backproject((K.cx, K.cy + K.fy), 1.0, K), [0, 1, 1], atol=1e-12)

    @pytest.mark.parametrize("depth", [0.0, -1.0])
    def test_non_positive_depth(self, depth):
        with pytest.raises(ValueError):
            backproject((1, 1), depth, K)

    @given(st.floats(0, 639), st.floats(0, 479), st.floats(0.1, 200))
    def test_project_inverts_backproject(self, u, v, depth):
        pu, pv = project(backproject((u, v), depth, K), K)
        assert abs(pu - u) < 1e-6 and abs(pv - v) < 1e-6

    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0, 1, 1, 1, 4, 4)
        with pytest.raises(ValueError):
            CameraIntrinsics(1, 1, 4, 1, 4, 4)


class TestGroundPlane:
    plane = GroundPlane((0.0, -1.0, 0.0), 1.7)

    def test_point_on_plane(self):
        P = np.array([3.0, 1.7, 12.0])
        assert height_above_plane(P, self.plane) == 0.0

    def test_camera_height(self):
        assert height_above_plane((0, 0, 5), self.plane) == pytest.approx(1.7, abs=1e-15)
        assert height_above_plane((0, 1.7, 5), self.plane) == pytest.approx(0.0, abs=1e-15)

    def test_normal_must_be_unit(self):
        with pytest.raises(ValueError):
            GroundPlane((0, -2, 0), 1.0)

    @settings(max_examples=50)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1))
    def test_tilted_plane(self, a, b, c):
        n = np.array([a, -c, b]) / np.linalg.norm([a, -c, b])
        plane = GroundPlane(tuple(n), 1.5)
        # the foot of the camera centre on the plane has zero height
        foot = -1.5 * n
        assert abs(height_above_plane(foot, plane)) < 1e-12
