"""Raster heatmaps as binary PPM (P6) images with a legend sidecar.

Colormaps are piecewise-linear RGB tables:

* ``diverging`` (error maps): red for negative values (underestimation),
  white at zero, blue for positive values (overestimation). The value range
  is always symmetric about zero.
* ``sequential`` (precipitation): white to dark blue.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

COLORMAPS = {
    "diverging": np.array(
        [
            [103, 0, 31],
            [214, 96, 77],
            [253, 219, 199],
            [255, 255, 255],
            [209, 229, 240],
            [67, 147, 195],
            [5, 48, 97],
        ],
        dtype=float,
    ),
    "sequential": np.array(
        [
            [255, 255, 255],
            [198, 219, 239],
            [107, 174, 214],
            [33, 113, 181],
            [8, 48, 107],
        ],
        dtype=float,
    ),
}


@dataclass(frozen=True)
class HeatmapStyle:
    colormap: str = "sequential"
    value_range: Optional[Tuple[float, float]] = None
    cell_pixels: int = 8

    def __post_init__(self):
        if self.colormap not in COLORMAPS:
            raise ValueError(f"unknown colormap {self.colormap!r}")
        if self.cell_pixels < 1:
            raise ValueError("cell_pixels must be >= 1")

    def resolve_range(self, values: np.ndarray) -> Tuple[float, float]:
        if self.colormap == "diverging":
            if self.value_range is not None:
                half = max(abs(self.value_range[0]), abs(self.value_range[1]))
            else:
                half = float(np.max(np.abs(values))) if values.size else 0.0
            half = half or 1.0
            return -half, half
        if self.value_range is not None:
            lo, hi = self.value_range
        else:
            lo, hi = float(values.min()), float(values.max())
        if hi <= lo:
            hi = lo + 1.0
        return lo, hi


ERROR_STYLE = HeatmapStyle("diverging")
PRECIP_STYLE = HeatmapStyle("sequential")


def colorize(values, style: HeatmapStyle) -> Tuple[np.ndarray, Tuple[float, float]]:
    """Map values to uint8 RGB through the style's table; returns (rgb, (vmin, vmax))."""
    values = np.asarray(values, dtype=float)
    lo, hi = style.resolve_range(values)
    table = COLORMAPS[style.colormap]
    pos = np.clip((values - lo) / (hi - lo), 0.0, 1.0) * (len(table) - 1)
    anchors = np.arange(len(table))
    rgb = np.stack([np.interp(pos, anchors, table[:, c]) for c in range(3)], axis=-1)
    return np.rint(rgb).astype(np.uint8), (lo, hi)


def render_heatmap(grid_values, style: HeatmapStyle, path, lat_values=None) -> Path:
    """Write ``grid_values`` (n_lat, n_lon) as a P6 image, north up.

    Rows are flipped when latitudes increase with the row index so that the
    northernmost row is drawn at the top. A ``<path>.legend.txt`` sidecar
    records the colormap, value range and anchor colours.
    """
    values = np.asarray(grid_values, dtype=float)
    if values.ndim != 2:
        raise ValueError("heatmap needs a 2-D grid")
    if not np.all(np.isfinite(values)):
        raise ValueError("heatmap values must be finite")
    if lat_values is not None and len(lat_values) > 1 and lat_values[0] < lat_values[-1]:
        values = values[::-1]
    rgb, (lo, hi) = colorize(values, style)
    k = style.cell_pixels
    img = np.repeat(np.repeat(rgb, k, axis=0), k, axis=1)
    path = Path(path)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(img.tobytes())
    table = COLORMAPS[style.colormap]
    lines = [f"colormap {style.colormap}", f"vmin {lo!r}", f"vmax {hi!r}"]
    for i, color in enumerate(table.astype(int)):
        value = lo + (hi - lo) * i / (len(table) - 1)
        lines.append(f"{value!r} {color[0]} {color[1]} {color[2]}")
    Path(str(path) + ".legend.txt").write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_ppm(path) -> np.ndarray:
    """Parse a P6 file written by :func:`render_heatmap` into an (h, w, 3) uint8 array."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ValueError("not a binary PPM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
