"""Color lookup tables for rasterizing the damage field.

Each table maps a byte index (damage scaled to 0..255) to an RGB color
and, through the standard luminance weights, to a single gray byte.
The tables are adjusted at the dark end so the first nonzero index is
already distinguishable from index zero after rounding: every map then
shares the same visibility cutoff, and the binarized images downstream
do not depend on which map was used.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

COLORMAPS = ("grayscale", "jet", "viridis", "hot", "pink")

_LUM_WEIGHTS = np.array([0.299, 0.587, 0.114])

# Sampled every 8th entry of the reference viridis table (33 anchors),
# linearly interpolated back to 256 entries.
_VIRIDIS_ANCHORS = np.array([
    (0.267004, 0.004874, 0.329415),
    (0.276022, 0.044167, 0.370164),
    (0.281924, 0.089666, 0.412415),
    (0.283072, 0.130895, 0.449241),
    (0.279574, 0.170599, 0.479997),
    (0.271828, 0.209303, 0.504434),
    (0.260571, 0.246922, 0.522828),
    (0.246811, 0.283237, 0.535941),
    (0.231674, 0.318106, 0.544834),
    (0.216210, 0.351535, 0.550627),
    (0.201239, 0.383670, 0.554294),
    (0.187231, 0.414746, 0.556547),
    (0.174274, 0.445044, 0.557792),
    (0.162142, 0.474838, 0.558140),
    (0.150476, 0.504369, 0.557430),
    (0.139147, 0.533812, 0.555298),
    (0.128729, 0.563265, 0.551229),
    (0.121148, 0.592739, 0.544641),
    (0.120081, 0.622161, 0.534946),
    (0.130067, 0.651384, 0.521608),
    (0.153894, 0.680203, 0.504172),
    (0.191090, 0.708366, 0.482284),
    (0.239374, 0.735588, 0.455688),
    (0.296479, 0.761561, 0.424223),
    (0.360741, 0.785964, 0.387814),
    (0.430983, 0.808473, 0.346476),
    (0.506271, 0.828786, 0.300362),
    (0.585678, 0.846661, 0.249897),
    (0.668054, 0.861999, 0.196293),
    (0.751884, 0.874951, 0.143228),
    (0.835270, 0.886029, 0.102646),
    (0.916242, 0.896091, 0.100717),
    (0.993248, 0.906157, 0.143936),
])
_VIRIDIS_POSITIONS = np.linspace(0.0, 255.0, len(_VIRIDIS_ANCHORS))


def _unit_tables():
    """RGB tables on [0, 1] before quantization, keyed by name."""
    x = np.arange(256) / 255.0
    jet = np.column_stack([
        np.clip(1.5 - 4.0 * np.abs(x - 0.75), 0.0, 1.0),
        np.clip(1.5 - 4.0 * np.abs(x - 0.50), 0.0, 1.0),
        np.clip(1.5 - 4.0 * np.abs(x - 0.25), 0.0, 1.0),
    ])
    hot = np.column_stack([
        np.clip(x / 0.375, 0.0, 1.0),
        np.clip((x - 0.375) / 0.375, 0.0, 1.0),
        np.clip((x - 0.75) / 0.25, 0.0, 1.0),
    ])
    pink = np.sqrt((2.0 * x[:, None] + hot) / 3.0)
    viridis = np.column_stack([
        np.interp(np.arange(256), _VIRIDIS_POSITIONS, _VIRIDIS_ANCHORS[:, c])
        for c in range(3)
    ])
    gray = np.repeat(x[:, None], 3, axis=1)
    return {"grayscale": gray, "jet": jet, "viridis": viridis,
            "hot": hot, "pink": pink}


def luminance(rgb):
    """Gray byte values of an RGB byte table, shape (..., 3) -> (...)."""
    return np.rint(np.asarray(rgb, dtype=np.float64) @ _LUM_WEIGHTS)


def _adjust_dark_end(rgb):
    """Lift entries whose gray value is not visibly above index zero.

    Adding the same integer to all three channels raises the rounded
    luminance by exactly that amount, so the minimal uniform lift makes
    every index from 1 up at least two gray levels brighter than the
    background index.
    """
    gray = luminance(rgb)
    target = gray[0] + 2.0
    lift = np.maximum(target - gray[1:], 0.0)
    out = rgb.astype(np.float64)
    out[1:] += np.ceil(lift)[:, None]
    out = np.clip(out, 0.0, 255.0)
    adjusted = luminance(out)
    if np.any(adjusted[1:] < target):
        raise ValueError("dark-end adjustment failed; map too bright at zero")
    return out.astype(np.uint8)


@lru_cache(maxsize=None)
def colormap_table(name):
    """256 x 3 uint8 RGB table for a named map, visibility adjusted."""
    tables = _unit_tables()
    if name not in tables:
        raise ValueError(f"unknown colormap '{name}', expected one of "
                         f"{COLORMAPS}")
    rgb = np.rint(tables[name] * 255.0)
    return _adjust_dark_end(rgb)


@lru_cache(maxsize=None)
def gray_table(name):
    """256-entry uint8 gray table: luminance of the adjusted RGB map."""
    return luminance(colormap_table(name)).astype(np.uint8)
