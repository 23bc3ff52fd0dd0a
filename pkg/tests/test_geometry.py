import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crowddamage.geometry import (
    BBox,
    Geotransform,
    Point2D,
    Polygon,
    ProbRaster,
    contains,
    extract_contours,
    filter_min_area,
    iou,
    point_box_distance,
    polygon_envelope,
    threshold_mask,
)


def rasterize_rect(shape, rect, value=1.0):
    """Test oracle: fill pixel columns [c0, c1) x rows [r0, r1); the crack
    envelope of that component is exactly (c0, r0, c1, r1)."""
    c0, r0, c1, r1 = rect
    arr = np.zeros(shape)
    arr[r0:r1, c0:c1] = value
    return arr


coords = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


@st.composite
def bboxes(draw):
    x0, x1 = sorted((draw(coords), draw(coords)))
    y0, y1 = sorted((draw(coords), draw(coords)))
    return BBox(x0, y0, x1, y1)


class TestIou:
    def test_identity(self):
        assert iou(BBox(0, 0, 2, 2), BBox(0, 0, 2, 2)) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) == 0.0

    def test_partial_overlap(self):
        # intersection 2, union 6
        assert iou(BBox(0, 0, 2, 2), BBox(1, 0, 3, 2)) == pytest.approx(1 / 3)

    def test_degenerate_points(self):
        assert iou(BBox(1, 1, 1, 1), BBox(1, 1, 1, 1)) == 1.0
        assert iou(BBox(1, 1, 1, 1), BBox(2, 2, 2, 2)) == 0.0
        assert iou(BBox(1, 1, 1, 1), BBox(0, 0, 3, 3)) == 0.0

    @given(bboxes(), bboxes())
    def test_symmetric(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(bboxes())
    def test_self_iou(self, a):
        if a.area > 0:
            assert iou(a, a) == 1.0

    @given(bboxes(), bboxes())
    def test_range(self, a, b):
        assert 0.0 <= iou(a, b) <= 1.0


class TestContains:
    def test_interior(self):
        assert contains(BBox(0, 0, 2, 2), Point2D(1, 1))

    def test_boundary_is_inside(self):
        assert contains(BBox(0, 0, 2, 2), Point2D(2, 2))

    def test_outside(self):
        assert not contains(BBox(0, 0, 2, 2), Point2D(2.001, 1))

    def test_distance(self):
        assert point_box_distance(BBox(0, 0, 2, 2), Point2D(1, 1)) == 0.0
        assert point_box_distance(BBox(0, 0, 2, 2), Point2D(5, 2)) == 3.0
        assert point_box_distance(BBox(0, 0, 2, 2), Point2D(5, 6)) == 5.0


class TestThreshold:
    def test_all_zero(self):
        mask = threshold_mask(ProbRaster.from_array(np.zeros((3, 4))), 0.5)
        assert not mask.bits.any()

    def test_all_one(self):
        mask = threshold_mask(ProbRaster.from_array(np.ones((3, 4))), 0.5)
        assert mask.bits.all()

    def test_pointwise(self):
        mask = threshold_mask(ProbRaster.from_array(np.array([[0.4, 0.6]])), 0.5)
        assert mask.bits.tolist() == [[False, True]]

    def test_threshold_inclusive(self):
        mask = threshold_mask(ProbRaster.from_array(np.array([[0.5]])), 0.5)
        assert mask.bits.all()

    @pytest.mark.parametrize("theta", [-0.1, 1.1])
    def test_bad_theta(self, theta):
        with pytest.raises(ValueError):
            threshold_mask(ProbRaster.from_array(np.zeros((2, 2))), theta)

    def test_monotone(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            raster = ProbRaster.from_array(rng.random((12, 12)))
            t1, t2 = sorted(rng.random(2))
            fg1 = threshold_mask(raster, t1).bits
            fg2 = threshold_mask(raster, t2).bits
            assert (fg2 <= fg1).all()  # higher threshold shrinks the foreground


class TestContours:
    def test_empty_mask(self):
        assert extract_contours(threshold_mask(ProbRaster.from_array(np.zeros((4, 4))), 0.5)) == []

    def test_single_rectangle_round_trip(self):
        arr = rasterize_rect((10, 14), (3, 2, 7, 5))
        polys = extract_contours(threshold_mask(ProbRaster.from_array(arr), 0.5))
        assert len(polys) == 1
        env = polygon_envelope(polys[0], Geotransform.identity())
        assert env.as_tuple() == (3, 2, 7, 5)

    def test_two_rectangles(self):
        arr = rasterize_rect((12, 12), (1, 1, 4, 4)) + rasterize_rect((12, 12), (6, 6, 11, 9))
        polys = extract_contours(threshold_mask(ProbRaster.from_array(arr), 0.5))
        envs = sorted(polygon_envelope(p, Geotransform.identity()).as_tuple() for p in polys)
        assert envs == [(1, 1, 4, 4), (6, 6, 11, 9)]

    def test_single_pixel(self):
        arr = rasterize_rect((5, 5), (2, 3, 3, 4))
        polys = extract_contours(threshold_mask(ProbRaster.from_array(arr), 0.5))
        assert len(polys) == 1
        assert polygon_envelope(polys[0], Geotransform.identity()).as_tuple() == (2, 3, 3, 4)

    def test_diagonal_pair_is_one_component(self):
        arr = np.zeros((4, 4))
        arr[1, 1] = arr[2, 2] = 1.0
        polys = extract_contours(threshold_mask(ProbRaster.from_array(arr), 0.5))
        assert len(polys) == 1

    def test_hole_ignored(self):
        arr = np.ones((7, 7))
        arr[3, 3] = 0.0
        polys = extract_contours(threshold_mask(ProbRaster.from_array(arr), 0.5))
        assert len(polys) == 1
        assert polys[0].holes == ()
        assert polygon_envelope(polys[0], Geotransform.identity()).as_tuple() == (0, 0, 7, 7)

    def test_random_rectangles_round_trip(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            h, w = rng.integers(6, 40, 2)
            c0 = int(rng.integers(0, w - 2))
            r0 = int(rng.integers(0, h - 2))
            c1 = int(rng.integers(c0 + 1, w))
            r1 = int(rng.integers(r0 + 1, h))
            arr = rasterize_rect((h, w), (c0, r0, c1, r1))
            polys = extract_contours(threshold_mask(ProbRaster.from_array(arr), 0.5))
            assert len(polys) == 1
            env = polygon_envelope(polys[0], Geotransform.identity())
            for got, want in zip(env.as_tuple(), (c0, r0, c1, r1)):
                assert abs(got - want) <= 1.0
            assert env.as_tuple() == (c0, r0, c1, r1)  # crack tracing is exact


class TestEnvelope:
    triangle = Polygon(exterior=(Point2D(0, 0), Point2D(4, 0), Point2D(0, 3)))

    def test_triangle_identity(self):
        assert polygon_envelope(self.triangle, Geotransform.identity()).as_tuple() == (0, 0, 4, 3)

    def test_unit_square(self):
        square = Polygon(exterior=(Point2D(0, 0), Point2D(1, 0), Point2D(1, 1), Point2D(0, 1)))
        assert polygon_envelope(square, Geotransform.identity()).as_tuple() == (0, 0, 1, 1)

    def test_scale_and_offset(self):
        gt = Geotransform(a=2, b=0, c=10, d=0, e=2, f=10)
        assert polygon_envelope(self.triangle, gt).as_tuple() == (10, 10, 18, 16)


class TestFilterMinArea:
    def test_drops_small(self):
        boxes = [BBox(0, 0, 1, 1), BBox(0, 0, 10, 10)]
        assert filter_min_area(boxes, 5) == [BBox(0, 0, 10, 10)]

    def test_zero_threshold_is_identity(self):
        boxes = [BBox(0, 0, 1, 1), BBox(0, 0, 0, 0)]
        assert filter_min_area(boxes, 0) == boxes

    def test_empty(self):
        assert filter_min_area([], 3.0) == []


class TestValidation:
    def test_bbox_order(self):
        with pytest.raises(ValueError):
            BBox(2, 0, 1, 1)

    def test_point_finite(self):
        with pytest.raises(ValueError):
            Point2D(float("nan"), 0)

    def test_polygon_needs_three_vertices(self):
        with pytest.raises(ValueError):
            Polygon(exterior=(Point2D(0, 0), Point2D(1, 1)))

    def test_raster_range(self):
        with pytest.raises(ValueError):
            ProbRaster.from_array(np.array([[1.5]]))
