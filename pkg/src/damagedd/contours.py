"""Damage contour extraction from binarized images.

The cleaned binary image is segmented into 8-connected components of
damage pixels.  Each component's outer boundary is walked with a Moore
neighbor trace, simplified to a polygon, and wrapped in its pixel-edge
bounding rectangle mapped back to physical coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import binary_threshold, morphological_open, suppress

MIN_COMPONENT_PIXELS = 4

# chessboard neighborhood in clockwise order, starting east; rows grow
# downward so "clockwise" here is counterclockwise in physical space
_DIRS = ((0, 1), (1, 1), (1, 0), (1, -1),
         (0, -1), (-1, -1), (-1, 0), (-1, 1))
_DIR_INDEX = {d: i for i, d in enumerate(_DIRS)}


def _trace_boundary(mask, start):
    """Ordered outer-boundary pixels of one component (Moore trace).

    The walk starts at the component's top-left-most pixel and keeps
    the component on its right; thin protrusions are traversed twice,
    which keeps the polygon closed.  Terminates when the first move
    repeats (entering the start pixel in the starting direction).
    """
    h, w = mask.shape
    p = (int(start[0]), int(start[1]))
    b = (p[0], p[1] - 1)
    path = [p]
    first_move = None
    limit = 4 * int(mask.sum()) + 8
    for _ in range(limit):
        d0 = _DIR_INDEX[(b[0] - p[0], b[1] - p[1])]
        nxt = None
        for k in range(1, 9):
            d = _DIRS[(d0 + k) % 8]
            q = (p[0] + d[0], p[1] + d[1])
            if 0 <= q[0] < h and 0 <= q[1] < w and mask[q]:
                nxt = q
                break
            b = q
        if nxt is None:
            break
        if (p, nxt) == first_move:
            break
        if first_move is None:
            first_move = (p, nxt)
        path.append(nxt)
        p = nxt
    if len(path) > 1 and path[-1] == path[0]:
        path.pop()
    return np.array(path, dtype=np.int64)


def polygon_perimeter(points):
    """Closed length of a polygon given without a repeated endpoint."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    return float(np.hypot(*(np.roll(pts, -1, axis=0) - pts).T).sum())


def _rdp_keep(points, epsilon):
    """Boolean keep-mask of an open polyline under the standard
    farthest-point recursion."""
    n = len(points)
    keep = np.zeros(n, dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        chord = points[j] - points[i]
        length = float(np.hypot(*chord))
        rel = points[i + 1:j] - points[i]
        if length == 0.0:
            dist = np.hypot(rel[:, 0], rel[:, 1])
        else:
            dist = np.abs(chord[0] * rel[:, 1] - chord[1] * rel[:, 0]) / length
        k = int(np.argmax(dist))
        if dist[k] > epsilon:
            k += i + 1
            keep[k] = True
            stack.append((i, k))
            stack.append((k, j))
    return keep


def simplify_polygon(points, epsilon):
    """Simplify a closed polygon, anchoring the split at the vertex
    farthest from the start so the result stays closed."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n <= 3:
        return pts.copy()
    far = int(np.argmax(((pts - pts[0]) ** 2).sum(axis=1)))
    if far == 0:
        return pts[:1].copy()
    first = _rdp_keep(pts[:far + 1], epsilon)
    second = _rdp_keep(np.vstack([pts[far:], pts[:1]]), epsilon)
    idx = list(np.nonzero(first)[0])
    idx.extend(far + int(k) for k in np.nonzero(second)[0][1:-1])
    return pts[idx]


@dataclass
class Contour:
    """One damage region: traced boundary plus derived geometry."""

    pixels: np.ndarray      # boundary trace, (n, 2) of (row, col)
    area_px: int            # component size in pixels
    pixel_box: tuple        # (rmin, rmax, cmin, cmax), inclusive
    polygon: np.ndarray     # boundary at pixel centers, physical (x, y)
    simplified: np.ndarray  # simplified physical polygon
    rect: tuple             # physical bounding box (x0, y0, x1, y1)

    @property
    def rect_center(self):
        x0, y0, x1, y1 = self.rect
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))

    @property
    def rect_dims(self):
        x0, y0, x1, y1 = self.rect
        return (x1 - x0, y1 - y0)


@dataclass
class DetectionResult:
    contours: list
    binary: object          # opened binary image, the stage that is hashed

    @property
    def digest(self):
        return self.binary.digest()


def find_contours(binary):
    """Trace every damage component of a binary image.

    Components smaller than :data:`MIN_COMPONENT_PIXELS` are dropped.
    Results are ordered by the top-left corner of their bounding box.
    """
    fg = binary.pixels == 0
    labels, n = ndimage.label(fg, structure=np.ones((3, 3), dtype=int))
    out = []
    for lid, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        mask = labels[sl] == lid
        area = int(mask.sum())
        if area < MIN_COMPONENT_PIXELS:
            continue
        rows, cols = np.nonzero(mask)
        k = np.lexsort((cols, rows))[0]
        local = _trace_boundary(mask, (rows[k], cols[k]))
        offset = np.array([sl[0].start, sl[1].start])
        pix = local + offset
        box = (int(pix[:, 0].min()), int(pix[:, 0].max()),
               int(pix[:, 1].min()), int(pix[:, 1].max()))
        out.append((box, pix, area))
    out.sort(key=lambda t: t[0])
    result = []
    for box, pix, area in out:
        x, y = binary.pixel_centers(pix[:, 0], pix[:, 1])
        polygon = np.column_stack([x, y])
        eps = 0.01 * polygon_perimeter(polygon)
        simplified = simplify_polygon(polygon, eps)
        rect = binary.pixel_box_to_physical(*box)
        result.append(Contour(pix, area, box, polygon, simplified, rect))
    return result


def detect_damage_contours(inverted_padded, misleading, config,
                           snapshot=None):
    """Run the cleanup chain on an inverted padded gray image and trace
    the damage contours.

    ``snapshot`` is an optional callable receiving (stage_name, image)
    for each intermediate product.
    """
    suppressed = suppress(inverted_padded, misleading)
    binary = binary_threshold(suppressed, misleading.threshold)
    opened = morphological_open(binary, config.kernel,
                                config.open_iterations)
    if snapshot is not None:
        snapshot("suppressed", suppressed)
        snapshot("binary", binary)
        snapshot("opened", opened)
    return DetectionResult(find_contours(opened), opened)
