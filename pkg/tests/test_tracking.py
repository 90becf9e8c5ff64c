"""Subdomain rectangles: scaling, distances, containment and decisions."""

import numpy as np
import pytest
import shapely.geometry as sg

from damagedd.contours import Contour
from damagedd.tracking import (ContourTracker, DECOMPOSE, NONE, REPEAT,
                               TrackConfig, directional_weights,
                               merge_intersecting, points_in_polygon,
                               points_in_rect, rect_interior_segments,
                               rects_intersect, rectangle_polygon,
                               scale_rectangle, scaling_factors,
                               weighted_margin, weighted_min_distance)


# -- scaling --------------------------------------------------------------

def test_scaling_factors_dominant_direction():
    # The longer side keeps the user factor; the shorter side takes the
    # aspect-scaled factor, floored at the threshold.
    sx, sy = scaling_factors((10.0, 2.0), 2.0, 3.0)
    assert sx == pytest.approx(2.0)
    assert sy == pytest.approx(3.0)        # (2/10)*2 floored at 3
    sx, sy = scaling_factors((2.0, 10.0), 5.0, 1.0)
    assert sx == pytest.approx(1.0)        # (2/10)*5 = 1
    assert sy == pytest.approx(5.0)


def test_scaling_factors_square_keeps_user_factor():
    sx, sy = scaling_factors((5.0, 5.0), 2.0, 3.0)
    assert sx == pytest.approx(2.0) and sy == pytest.approx(2.0)


def test_directional_weights_rebalance_the_anisotropy():
    # The off-axis was grown less, so distances toward it are inflated
    # by the factor ratio; the dominant axis keeps weight one.
    w = directional_weights((10.0, 2.0), scaling_factors((10.0, 2.0), 2, 1))
    assert w[0] == pytest.approx(1.0)
    assert w[1] == pytest.approx(2.0)      # sfx/sfy = 2/1
    w = directional_weights((2.0, 10.0), scaling_factors((2.0, 10.0), 2, 1))
    assert w[1] == pytest.approx(1.0)
    assert w[0] == pytest.approx(2.0)
    w = directional_weights((5.0, 5.0), (2.0, 2.0))
    assert w == (1.0, 1.0)


def test_scale_rectangle_grows_about_center_and_clips():
    rect = scale_rectangle((4.0, 4.0, 6.0, 6.0), (2.0, 3.0),
                           (0.0, 0.0, 10.0, 10.0))
    assert rect == pytest.approx((3.0, 2.0, 7.0, 8.0))
    rect = scale_rectangle((1.0, 1.0, 3.0, 3.0), (4.0, 4.0),
                           (0.0, 0.0, 10.0, 10.0))
    assert rect == pytest.approx((0.0, 0.0, 6.0, 6.0))


def test_merge_intersecting_chains():
    rects = [(0, 0, 2, 2), (1.5, 0, 4, 2), (3.5, 0, 6, 2), (8, 8, 9, 9)]
    merged = merge_intersecting(rects)
    assert sorted(merged) == [(0, 0, 6, 2), (8, 8, 9, 9)]
    assert merge_intersecting(merged) == merged
    assert merge_intersecting([]) == []


def test_rects_intersect_closed_boxes():
    assert rects_intersect((0, 0, 1, 1), (1, 1, 2, 2))     # corner touch
    assert not rects_intersect((0, 0, 1, 1), (1.01, 0, 2, 1))


# -- point containment ----------------------------------------------------

def _winding_inside(point, polygon):
    """Signed-angle winding number; robust away from the boundary."""
    d = polygon - point
    angles = np.arctan2(d[:, 1], d[:, 0])
    turns = np.diff(np.concatenate([angles, angles[:1]]))
    turns = (turns + np.pi) % (2.0 * np.pi) - np.pi
    return abs(turns.sum()) > np.pi


def _random_star_polygon(rng, n):
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, size=n))
    radii = rng.uniform(1.0, 4.0, size=n)
    return np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])


def test_points_in_polygon_matches_winding_oracle():
    rng = np.random.default_rng(17)
    for _ in range(25):
        poly = _random_star_polygon(rng, int(rng.integers(5, 12)))
        pts = rng.uniform(-4.5, 4.5, size=(150, 2))
        ring = sg.LinearRing(poly)
        clear = np.array([ring.distance(sg.Point(p)) > 1e-6 for p in pts])
        got = points_in_polygon(pts, poly)
        want = np.array([_winding_inside(p, poly) for p in pts])
        assert np.array_equal(got[clear], want[clear])


def test_points_in_polygon_rectangle_edges():
    square = rectangle_polygon((0.0, 0.0, 2.0, 2.0))
    pts = np.array([[1.0, 1.0], [0.0, 1.0], [2.0, 1.0], [1.0, 0.0],
                    [1.0, 2.0], [2.5, 1.0], [-0.1, 1.0]])
    got = points_in_polygon(pts, square)
    assert got[:5].all()                   # interior and all four edges
    assert not got[5:].any()


def test_points_in_rect_inclusive():
    rect = (0.0, 0.0, 2.0, 1.0)
    pts = np.array([[0.0, 0.0], [2.0, 1.0], [1.0, 0.5], [2.1, 0.5]])
    assert points_in_rect(pts, rect).tolist() == [True, True, True, False]


# -- polygon distances ----------------------------------------------------

def test_weighted_min_distance_matches_shapely_unweighted():
    rng = np.random.default_rng(23)
    done = 0
    while done < 30:
        a = _random_star_polygon(rng, int(rng.integers(4, 9)))
        b = _random_star_polygon(rng, int(rng.integers(4, 9)))
        b = b + rng.uniform(6.0, 12.0, size=2)    # keep them separated
        want = sg.LinearRing(a).distance(sg.LinearRing(b))
        got = weighted_min_distance(a, b, np.array([1.0, 1.0]))
        assert got == pytest.approx(want, abs=1e-9)
        done += 1


def test_weighted_min_distance_crossing_is_zero():
    a = rectangle_polygon((0.0, 0.0, 4.0, 4.0))
    b = rectangle_polygon((2.0, -1.0, 6.0, 1.0))  # pierces the right edge
    assert weighted_min_distance(a, b, np.array([1.0, 1.0])) == 0.0


def test_weighted_min_distance_anisotropic_weights():
    # Two horizontal segments 1 apart vertically, far apart horizontally
    # matter differently depending on the weights.
    a = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.1], [0.0, 0.1]])
    b = np.array([[0.0, 2.0], [1.0, 2.0], [1.0, 2.1], [0.0, 2.1]])
    base = weighted_min_distance(a, b, np.array([1.0, 1.0]))
    doubled = weighted_min_distance(a, b, np.array([1.0, 2.0]))
    assert base == pytest.approx(1.9)
    assert doubled == pytest.approx(3.8)


def _brute_min_distance(a, b, weights):
    """Vertex-to-edge minimum over both directions, pure python."""
    aw = a * weights
    bw = b * weights

    def point_seg(p, s0, s1):
        d = s1 - s0
        denom = float(d @ d)
        t = 0.0 if denom == 0.0 else max(0.0, min(1.0, ((p - s0) @ d) / denom))
        c = s0 + t * d
        return float(np.hypot(*(p - c)))

    best = np.inf
    for poly_p, poly_s in ((aw, bw), (bw, aw)):
        m = len(poly_s)
        for p in poly_p:
            for i in range(m):
                best = min(best, point_seg(p, poly_s[i], poly_s[(i + 1) % m]))
    return best


def test_weighted_min_distance_matches_brute_force():
    rng = np.random.default_rng(31)
    for _ in range(20):
        a = _random_star_polygon(rng, int(rng.integers(4, 8)))
        b = _random_star_polygon(rng, int(rng.integers(4, 8)))
        b = b + rng.uniform(5.0, 9.0, size=2)
        w = rng.uniform(0.5, 3.0, size=2)
        got = weighted_min_distance(a, b, w)
        assert got == pytest.approx(_brute_min_distance(a, b, w), abs=1e-9)


# -- boundary-aware margins ----------------------------------------------

DOMAIN = (0.0, 0.0, 50.0, 50.0)


def test_rect_interior_segments_drop_domain_edges():
    sa, sb = rect_interior_segments((0.0, 10.0, 20.0, 30.0), DOMAIN)
    assert len(sa) == 3                    # left edge lies on the boundary
    sa, sb = rect_interior_segments((10.0, 10.0, 20.0, 30.0), DOMAIN)
    assert len(sa) == 4
    sa, sb = rect_interior_segments(DOMAIN, DOMAIN)
    assert len(sa) == 0


def test_weighted_margin_whole_domain_is_infinite():
    poly = rectangle_polygon((20.0, 20.0, 30.0, 30.0))
    w = np.array([1.0, 1.0])
    assert weighted_margin(poly, DOMAIN, w, DOMAIN) == np.inf


def test_weighted_margin_measures_nearest_interior_edge():
    rect = (10.0, 0.0, 40.0, 50.0)         # top/bottom on the boundary
    poly = rectangle_polygon((18.0, 20.0, 25.0, 45.0))
    w = np.array([1.0, 1.0])
    # nearest interior edge is x=10; the poly edge at y=45 is 5 from the
    # domain boundary but that edge cannot be escaped through
    assert weighted_margin(poly, rect, w, DOMAIN) == pytest.approx(8.0)


def test_weighted_margin_crossing_is_zero():
    rect = (10.0, 10.0, 40.0, 40.0)
    poly = rectangle_polygon((35.0, 20.0, 45.0, 30.0))
    assert weighted_margin(poly, rect, np.array([1.0, 1.0]), DOMAIN) == 0.0


# -- tracker decisions ----------------------------------------------------

def _contour(rect):
    x0, y0, x1, y1 = rect
    poly = rectangle_polygon(rect)
    return Contour(pixels=np.zeros((4, 2), dtype=int), area_px=16,
                   pixel_box=(0, 1, 0, 1), polygon=poly, simplified=poly,
                   rect=rect)


def _tracker(d_thres=1.0):
    return ContourTracker(TrackConfig(2.0, 2.0, d_thres), DOMAIN)


def test_tracker_none_without_contours():
    tracker = _tracker()
    decision = tracker.decide([])
    assert decision.action == NONE
    assert tracker.sdcs == []


def test_tracker_first_detection_decomposes():
    tracker = _tracker()
    decision = tracker.decide([_contour((22.0, 22.0, 26.0, 26.0))])
    assert decision.action == DECOMPOSE
    assert decision.reason == "first detection"
    assert len(decision.sdcs) == 1
    x0, y0, x1, y1 = decision.sdcs[0]
    assert (x0, y0, x1, y1) == pytest.approx((20.0, 20.0, 28.0, 28.0))
    # a contour that stays comfortably inside changes nothing
    decision = tracker.decide([_contour((22.0, 22.0, 26.0, 26.0))])
    assert decision.action == NONE
    assert decision.reason == "all margins held"


def test_tracker_growth_triggers_decompose():
    tracker = _tracker()
    tracker.decide([_contour((22.0, 22.0, 26.0, 26.0))])
    decision = tracker.decide([_contour((21.0, 21.0, 27.5, 27.5))])
    assert decision.action == DECOMPOSE
    assert decision.reason == "contour too close to its subdomain"
    assert min(decision.distances) <= 1.0


def test_tracker_escape_repeats():
    tracker = _tracker()
    tracker.decide([_contour((22.0, 22.0, 26.0, 26.0))])
    decision = tracker.decide([_contour((30.0, 30.0, 34.0, 34.0))])
    assert decision.action == REPEAT
    assert decision.reason == "contour crossed its subdomain"
    assert decision.distances == [0.0]


def test_tracker_count_change_decomposes():
    tracker = _tracker()
    tracker.decide([_contour((22.0, 22.0, 26.0, 26.0))])
    two = [_contour((22.0, 22.0, 24.0, 24.0)),
           _contour((25.0, 25.0, 27.0, 27.0))]
    decision = tracker.decide(two)
    assert decision.action == DECOMPOSE
    assert decision.reason == "contour count changed"
    assert tracker.tracked_count == 2


def test_tracker_node_mask_covers_subdomains():
    tracker = _tracker()
    tracker.decide([_contour((22.0, 22.0, 26.0, 26.0))])
    pts = np.array([[21.0, 21.0], [24.0, 24.0], [19.0, 24.0], [29.0, 29.0]])
    assert tracker.node_mask(pts).tolist() == [True, True, False, False]
