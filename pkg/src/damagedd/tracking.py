"""Tracking of damage contours against their assigned subdomains.

After every converged increment the detected damage contours (DCs) are
compared with the subdomain contours (SDCs) that currently define the
unhealthy region.  Each DC is paired with an SDC and their weighted
boundary distance decides whether the partition still holds, needs to
be rebuilt, or the increment must be repeated on a larger subdomain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NONE = "none"
DECOMPOSE = "decompose"
REPEAT = "repeat"

_EDGE_EPS = 1e-9


@dataclass
class TrackConfig:
    """Subdomain sizing and proximity thresholds (physical units)."""

    sf_user: float = 2.0
    sf_thresh: float = 2.0
    d_thres: float = 1.0

    def __post_init__(self):
        if self.sf_user < 1.0 or self.sf_thresh < 1.0:
            raise ValueError("scaling factors below 1 would shrink the "
                             "subdomain onto its contour")
        if self.d_thres <= 0.0:
            raise ValueError("d_thres must be positive")


def scaling_factors(dims, sf_user, sf_thresh):
    """Anisotropic growth factors from the contour box dimensions.

    The dominant direction takes the user factor; the other direction
    takes the aspect-scaled factor, floored at the threshold so flat
    contours still get a usable margin.
    """
    dx, dy = dims
    if dx > dy:
        return sf_user, max(dy / dx * sf_user, sf_thresh)
    if dy > dx:
        return max(dx / dy * sf_user, sf_thresh), sf_user
    return sf_user, sf_user


def directional_weights(dims, sf):
    """Distance weights emphasizing the dominant contour direction."""
    dx, dy = dims
    sfx, sfy = sf
    if dx > dy:
        return 1.0, sfx / sfy
    if dy > dx:
        return sfy / sfx, 1.0
    return 1.0, 1.0


def scale_rectangle(rect, sf, domain):
    """Grow a rectangle about its center, then clip to the domain box."""
    x0, y0, x1, y1 = rect
    sfx, sfy = sf
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    hx, hy = 0.5 * sfx * (x1 - x0), 0.5 * sfy * (y1 - y0)
    dx0, dy0, dx1, dy1 = domain
    return (max(cx - hx, dx0), max(cy - hy, dy0),
            min(cx + hx, dx1), min(cy + hy, dy1))


def rectangle_polygon(rect):
    x0, y0, x1, y1 = rect
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])


def rects_intersect(a, b):
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


def merge_intersecting(rects):
    """Merge overlapping rectangles into common boxes until stable."""
    boxes = list(rects)
    changed = True
    while changed:
        changed = False
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                if rects_intersect(boxes[i], boxes[j]):
                    a, b = boxes[i], boxes[j]
                    merged = (min(a[0], b[0]), min(a[1], b[1]),
                              max(a[2], b[2]), max(a[3], b[3]))
                    boxes[j] = merged
                    del boxes[i]
                    changed = True
                    break
            if changed:
                break
    return boxes


def _point_segment_distance(points, a, b):
    """Distances from many points to many segments, shape (np, ns)."""
    points = np.asarray(points, dtype=np.float64)
    d = b - a                                             # (ns, 2)
    L2 = np.einsum("sj,sj->s", d, d)
    L2 = np.where(L2 == 0.0, 1.0, L2)
    rel = points[:, None, :] - a[None, :, :]              # (np, ns, 2)
    t = np.clip(np.einsum("psj,sj->ps", rel, d) / L2, 0.0, 1.0)
    proj = a[None, :, :] + t[..., None] * d[None, :, :]
    return np.hypot(*(points[:, None, :] - proj).transpose(2, 0, 1))


def _segments_cross(pa, pb, qa, qb):
    """True if any segment of the first family properly intersects any
    of the second (shared endpoints and touches count as distance zero
    through the vertex tests instead)."""

    def orient(o, a, b):
        return ((a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1])
                - (a[..., 1] - o[..., 1]) * (b[..., 0] - o[..., 0]))

    pa = pa[:, None, :]
    pb = pb[:, None, :]
    qa = qa[None, :, :]
    qb = qb[None, :, :]
    d1 = orient(qa, qb, pa)
    d2 = orient(qa, qb, pb)
    d3 = orient(pa, pb, qa)
    d4 = orient(pa, pb, qb)
    proper = ((d1 * d2) < 0.0) & ((d3 * d4) < 0.0)
    return bool(proper.any())


def polygon_segments(poly):
    poly = np.asarray(poly, dtype=np.float64)
    return poly, np.roll(poly, -1, axis=0)


def weighted_min_distance(poly_a, poly_b, weights):
    """Smallest weighted distance between two polygon boundaries.

    Coordinates are scaled by the directional weights first, then the
    minimum vertex-to-segment distance is taken in both directions.
    Boundaries that cross each other are at distance zero; a polygon
    strictly inside another keeps its positive margin to the boundary.
    """
    w = np.asarray(weights, dtype=np.float64)
    a = np.asarray(poly_a, dtype=np.float64) * w
    b = np.asarray(poly_b, dtype=np.float64) * w
    a0, a1 = polygon_segments(a)
    b0, b1 = polygon_segments(b)
    if _segments_cross(a0, a1, b0, b1):
        return 0.0
    d_ab = _point_segment_distance(a, b0, b1).min()
    d_ba = _point_segment_distance(b, a0, a1).min()
    return float(min(d_ab, d_ba))


def rect_interior_segments(rect, domain, eps=_EDGE_EPS):
    """Edges of a rectangle that do not lie on the domain boundary.

    Damage cannot leave the domain through a physical boundary, so a
    subdomain edge clipped onto it can never be escaped and must not
    count towards the proximity margin.
    """
    poly = rectangle_polygon(rect)
    a, b = polygon_segments(poly)
    x0, y0, x1, y1 = domain
    keep = []
    for i in range(len(a)):
        pa, pb = a[i], b[i]
        on_boundary = (
            (abs(pa[0] - x0) <= eps and abs(pb[0] - x0) <= eps)
            or (abs(pa[0] - x1) <= eps and abs(pb[0] - x1) <= eps)
            or (abs(pa[1] - y0) <= eps and abs(pb[1] - y0) <= eps)
            or (abs(pa[1] - y1) <= eps and abs(pb[1] - y1) <= eps))
        if not on_boundary:
            keep.append(i)
    return a[keep], b[keep]


def weighted_margin(poly, rect, weights, domain):
    """Weighted distance from a contour to the escapable part of a
    subdomain rectangle; infinite once the rectangle fills the domain."""
    sa, sb = rect_interior_segments(rect, domain)
    if sa.shape[0] == 0:
        return np.inf
    w = np.asarray(weights, dtype=np.float64)
    p = np.asarray(poly, dtype=np.float64) * w
    sa = sa * w
    sb = sb * w
    p0, p1 = polygon_segments(p)
    if _segments_cross(p0, p1, sa, sb):
        return 0.0
    verts = np.unique(np.concatenate([sa, sb]), axis=0)
    d1 = _point_segment_distance(p, sa, sb).min()
    d2 = _point_segment_distance(verts, p0, p1).min()
    return float(min(d1, d2))


def points_in_polygon(points, polygon):
    """Boundary-inclusive point-in-polygon test by rightward ray casting.

    Crossing counts use the half-open rule (an edge spans its lower y
    inclusively and its upper y exclusively) so shared vertices are
    counted once; points on an edge are inside by an explicit check.
    """
    pts = np.asarray(points, dtype=np.float64)
    a, b = polygon_segments(polygon)
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    ay, by = a[:, 1][None, :], b[:, 1][None, :]
    ax, bx = a[:, 0][None, :], b[:, 0][None, :]
    spans = ((ay <= y) & (y < by)) | ((by <= y) & (y < ay))
    dy = np.where(by == ay, 1.0, by - ay)
    t = (y - ay) / dy
    xi = ax + t * (bx - ax)
    inside = (spans & (xi > x)).sum(axis=1) % 2 == 1
    on_edge = (_point_segment_distance(pts, a, b) <= _EDGE_EPS).any(axis=1)
    return inside | on_edge


def points_in_rect(points, rect):
    pts = np.asarray(points, dtype=np.float64)
    x0, y0, x1, y1 = rect
    return ((pts[:, 0] >= x0 - _EDGE_EPS) & (pts[:, 0] <= x1 + _EDGE_EPS)
            & (pts[:, 1] >= y0 - _EDGE_EPS) & (pts[:, 1] <= y1 + _EDGE_EPS))


@dataclass
class TrackDecision:
    action: str
    sdcs: list
    distances: list = field(default_factory=list)
    reason: str = ""


class ContourTracker:
    """Carries the subdomain contours between increments and decides
    what the partition should do after each detection pass."""

    def __init__(self, config, domain):
        self.config = config
        self.domain = domain
        self.sdcs = []
        self.tracked_count = 0

    def _build_sdcs(self, contours):
        cfg = self.config
        rects = [scale_rectangle(
            c.rect, scaling_factors(c.rect_dims, cfg.sf_user, cfg.sf_thresh),
            self.domain) for c in contours]
        self.tracked_count = len(contours)
        return merge_intersecting(rects)

    def _contour_distance(self, contour):
        """Weighted margin of a contour inside its assigned subdomain.

        The assignment is the subdomain rectangle containing the contour
        center (merged rectangles hold several contours); a contour whose
        center lies in no rectangle has escaped and is at distance zero.
        """
        cx, cy = contour.rect_center
        homes = [r for r in self.sdcs
                 if r[0] <= cx <= r[2] and r[1] <= cy <= r[3]]
        if not homes:
            return 0.0
        sf = scaling_factors(contour.rect_dims, self.config.sf_user,
                             self.config.sf_thresh)
        w = directional_weights(contour.rect_dims, sf)
        return min(weighted_margin(contour.simplified, r, w, self.domain)
                   for r in homes)

    def decide(self, contours):
        cfg = self.config
        if not contours:
            return TrackDecision(NONE, self.sdcs, reason="no contours")
        if not self.sdcs:
            self.sdcs = self._build_sdcs(contours)
            return TrackDecision(DECOMPOSE, self.sdcs,
                                 reason="first detection")
        distances = [self._contour_distance(c) for c in contours]
        if any(d == 0.0 for d in distances):
            self.sdcs = self._build_sdcs(contours)
            return TrackDecision(REPEAT, self.sdcs, distances,
                                 "contour crossed its subdomain")
        if len(contours) != self.tracked_count:
            self.sdcs = self._build_sdcs(contours)
            return TrackDecision(DECOMPOSE, self.sdcs, distances,
                                 "contour count changed")
        if any(d <= cfg.d_thres for d in distances):
            self.sdcs = self._build_sdcs(contours)
            return TrackDecision(DECOMPOSE, self.sdcs, distances,
                                 "contour too close to its subdomain")
        return TrackDecision(NONE, self.sdcs, distances,
                             "all margins held")

    def node_mask(self, coords):
        """Nodes covered by any current subdomain rectangle."""
        mask = np.zeros(len(coords), dtype=bool)
        for rect in self.sdcs:
            mask |= points_in_rect(coords, rect)
        return mask
