"""Rasterization of the damage field and image-space preprocessing.

The nodal damage field is sampled on a regular pixel grid over the mesh
bounding box and mapped through a color table to a gray image.  The
processing chain that follows (invert, pad, suppress known artifacts,
threshold, open) turns that picture into a clean binary map of damaged
regions for the contour stage.

Image geometry: row 0 is the top of the domain.  A pixel (r, c) covers
the square ``[x0 + c s, x0 + (c+1) s] x [y1 - (r+1) s, y1 - r s]`` where
``s`` is the pixel size, so rectangles snapped to pixel edges map back
to exact physical boxes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .colormaps import COLORMAPS, gray_table
from .mesh import QUAD

SLIT_SENTINEL = 255


@dataclass
class RasterConfig:
    """Settings for the rasterizer and the binary cleanup."""

    resolution: int = 600
    pad: int = 100
    colormap: str = "jet"
    kernel: int = 11
    open_iterations: int = 5

    def __post_init__(self):
        if self.resolution < 64:
            raise ValueError("resolution must be at least 64 pixels")
        if self.pad < 0:
            raise ValueError("pad must be non-negative")
        if self.colormap not in COLORMAPS:
            raise ValueError(f"unknown colormap '{self.colormap}'")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("kernel must be an odd positive size")
        if self.open_iterations < 0:
            raise ValueError("open_iterations must be non-negative")


class _Frame:
    """Shared pixel-to-physical mapping for gray and binary images."""

    def __init__(self, pixels, x0, y1, pixel_size):
        self.pixels = pixels
        self.x0 = float(x0)
        self.y1 = float(y1)
        self.pixel_size = float(pixel_size)

    @property
    def shape(self):
        return self.pixels.shape

    def pixel_centers(self, rows, cols):
        s = self.pixel_size
        x = self.x0 + (np.asarray(cols) + 0.5) * s
        y = self.y1 - (np.asarray(rows) + 0.5) * s
        return x, y

    def pixel_box_to_physical(self, rmin, rmax, cmin, cmax):
        """Physical rectangle covered by an inclusive pixel index box."""
        s = self.pixel_size
        return (self.x0 + cmin * s, self.y1 - (rmax + 1) * s,
                self.x0 + (cmax + 1) * s, self.y1 - rmin * s)


class GrayImage(_Frame):

    def __init__(self, pixels, x0, y1, pixel_size):
        super().__init__(np.asarray(pixels, dtype=np.uint8), x0, y1,
                         pixel_size)


class BinaryImage(_Frame):
    """Two-level image: 0 marks damage, 255 marks intact material."""

    def __init__(self, pixels, x0, y1, pixel_size):
        pixels = np.asarray(pixels, dtype=np.uint8)
        super().__init__(pixels, x0, y1, pixel_size)

    def digest(self):
        h = hashlib.sha256()
        h.update(f"{self.pixels.shape[0]}x{self.pixels.shape[1]}:".encode())
        h.update(self.pixels.tobytes())
        return h.hexdigest()


@dataclass
class MisleadingPixelSet:
    """Pixels known to look like damage on a pristine configuration.

    Captured once from the first increment, where any dark pixel must be
    an artifact of the drawing itself (slit lines), not real damage.
    The same pixels are overwritten with the stored background value on
    every later image, so they can never seed a contour.
    """

    rows: np.ndarray
    cols: np.ndarray
    value: int
    shape: tuple

    @property
    def threshold(self):
        """Binarization threshold: one level below the background."""
        return self.value - 1


class Rasterizer:
    """Samples nodal fields on a fixed pixel grid over the mesh.

    The pixel-to-element map is computed once: each element is split
    into triangles, every pixel center inside a triangle stores the
    three node ids and barycentric weights.  Pixel centers that no
    triangle claims (degenerate slivers on cut lines) fall back to the
    value of the nearest node.  Pixels within half a pixel of a slit
    segment are drawn at the sentinel level instead of a field value,
    the way a printed crack line would appear.
    """

    def __init__(self, mesh, config):
        self.mesh = mesh
        self.config = config
        self._gray_lut = gray_table(config.colormap)
        bx0, by0, bx1, by1 = mesh.bounding_box()
        width, height = bx1 - bx0, by1 - by0
        long_side = max(width, height)
        s = long_side / config.resolution
        n_cols = max(int(np.ceil(width / s - 1e-9)), 1)
        n_rows = max(int(np.ceil(height / s - 1e-9)), 1)
        # center the half-pixel overhang on the short side
        self.x0 = bx0 - 0.5 * (n_cols * s - width)
        self.y1 = by1 + 0.5 * (n_rows * s - height)
        self.pixel_size = s
        self.n_rows, self.n_cols = n_rows, n_cols
        self._build_maps()

    def _pixel_grid(self):
        cols = self.x0 + (np.arange(self.n_cols) + 0.5) * self.pixel_size
        rows = self.y1 - (np.arange(self.n_rows) + 0.5) * self.pixel_size
        return rows, cols

    def _build_maps(self):
        mesh, s = self.mesh, self.pixel_size
        ys, xs = self._pixel_grid()
        H, W = self.n_rows, self.n_cols
        node_ids = np.zeros((H, W, 3), dtype=np.int64)
        weights = np.zeros((H, W, 3))
        claimed = np.zeros((H, W), dtype=bool)
        tris = []
        for elem in mesh.elements:
            c = elem.conn
            if elem.family == QUAD:
                tris.append((c[0], c[1], c[2]))
                tris.append((c[0], c[2], c[3]))
            else:
                tris.append(tuple(c))
        coords = mesh.nodes
        for tri in tris:
            p = coords[list(tri)]
            cmin = max(int(np.floor((p[:, 0].min() - self.x0) / s - 0.5)), 0)
            cmax = min(int(np.ceil((p[:, 0].max() - self.x0) / s - 0.5)), W - 1)
            rmin = max(int(np.floor((self.y1 - p[:, 1].max()) / s - 0.5)), 0)
            rmax = min(int(np.ceil((self.y1 - p[:, 1].min()) / s - 0.5)), H - 1)
            if cmin > cmax or rmin > rmax:
                continue
            gx, gy = np.meshgrid(xs[cmin:cmax + 1], ys[rmin:rmax + 1])
            det = ((p[1, 1] - p[2, 1]) * (p[0, 0] - p[2, 0])
                   + (p[2, 0] - p[1, 0]) * (p[0, 1] - p[2, 1]))
            w0 = ((p[1, 1] - p[2, 1]) * (gx - p[2, 0])
                  + (p[2, 0] - p[1, 0]) * (gy - p[2, 1])) / det
            w1 = ((p[2, 1] - p[0, 1]) * (gx - p[2, 0])
                  + (p[0, 0] - p[2, 0]) * (gy - p[2, 1])) / det
            w2 = 1.0 - w0 - w1
            inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
            block = claimed[rmin:rmax + 1, cmin:cmax + 1]
            take = inside & ~block
            if not take.any():
                continue
            rr, cc = np.nonzero(take)
            node_ids[rmin + rr, cmin + cc] = tri
            wset = np.stack([w0[rr, cc], w1[rr, cc], w2[rr, cc]], axis=-1)
            weights[rmin + rr, cmin + cc] = np.clip(wset, 0.0, 1.0)
            block[rr, cc] = True
        if not claimed.all():
            rr, cc = np.nonzero(~claimed)
            gx, gy = xs[cc], ys[rr]
            tree = cKDTree(coords)
            _, nearest = tree.query(np.column_stack([gx, gy]))
            node_ids[rr, cc, 0] = nearest
            weights[rr, cc, 0] = 1.0
        wsum = weights.sum(axis=-1, keepdims=True)
        self._node_ids = node_ids
        self._weights = weights / wsum
        self._slit_mask = self._build_slit_mask(xs, ys)

    def _build_slit_mask(self, xs, ys):
        mask = np.zeros((self.n_rows, self.n_cols), dtype=bool)
        reach = 0.5 * self.pixel_size * (1.0 + 1e-6)
        gx, gy = np.meshgrid(xs, ys)
        for slit in self.mesh.slits:
            p0 = np.asarray(slit.p0, dtype=np.float64)
            p1 = np.asarray(slit.p1, dtype=np.float64)
            d = p1 - p0
            L2 = float(d @ d)
            if L2 == 0.0:
                t = np.zeros_like(gx)
            else:
                t = np.clip(((gx - p0[0]) * d[0] + (gy - p0[1]) * d[1]) / L2,
                            0.0, 1.0)
            px = p0[0] + t * d[0]
            py = p0[1] + t * d[1]
            dist = np.hypot(gx - px, gy - py)
            mask |= dist <= reach
        return mask

    def rasterize(self, nodal_values):
        """Gray image of a nodal field clipped to [0, 1]."""
        vals = np.einsum("rwk,rwk->rw", self._weights,
                         nodal_values[self._node_ids])
        idx = np.rint(np.clip(vals, 0.0, 1.0) * 255.0).astype(np.intp)
        gray = self._gray_lut[idx]
        gray[self._slit_mask] = SLIT_SENTINEL
        return GrayImage(gray, self.x0, self.y1, self.pixel_size)


def invert(image):
    return GrayImage(255 - image.pixels, image.x0, image.y1,
                     image.pixel_size)


def pad_with_median(image, pad):
    """Surround the image with a margin at the median gray level."""
    med = int(np.rint(np.median(image.pixels)))
    s = image.pixel_size
    out = np.pad(image.pixels, pad, mode="constant", constant_values=med)
    return GrayImage(out, image.x0 - pad * s, image.y1 + pad * s, s)


def capture_misleading(image):
    """Record every pixel darker than the background of a pristine image."""
    med = int(np.rint(np.median(image.pixels)))
    rows, cols = np.nonzero(image.pixels < med)
    return MisleadingPixelSet(rows, cols, med, image.pixels.shape)


def suppress(image, misleading):
    """Overwrite the captured artifact pixels with the background level."""
    if image.pixels.shape != misleading.shape:
        raise ValueError("image shape does not match the captured set")
    out = image.pixels.copy()
    out[misleading.rows, misleading.cols] = misleading.value
    return GrayImage(out, image.x0, image.y1, image.pixel_size)


def binary_threshold(image, threshold):
    """Binarize: darker than the threshold marks damage (level 0)."""
    out = np.where(image.pixels < threshold, 0, 255).astype(np.uint8)
    return BinaryImage(out, image.x0, image.y1, image.pixel_size)


def morphological_open(image, size, iterations):
    """Repeated erode-then-dilate of the damage regions.

    The window is all-ones of the given odd size; edges replicate.
    Damage is the low level, so eroding it takes the window maximum and
    dilating it the window minimum.  One iteration removes damage
    features thinner than the window and restores the extent of
    everything that survives.
    """
    if size < 1 or size % 2 == 0:
        raise ValueError("window size must be odd and positive")
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    out = image.pixels
    for _ in range(iterations):
        out = ndimage.maximum_filter(out, size=size, mode="nearest")
        out = ndimage.minimum_filter(out, size=size, mode="nearest")
    return BinaryImage(out, image.x0, image.y1, image.pixel_size)


def write_pgm(image, path):
    """Binary PGM (P5) snapshot of any gray or binary image."""
    h, w = image.pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(image.pixels.tobytes())
