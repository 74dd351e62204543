"""Top-down (bird's-eye view) rendering of labelled point clouds."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

BACKGROUND = (0, 0, 0)


def bev_grid_shape(extent: float, resolution: float) -> int:
    n = int(round(2 * extent / resolution))
    if n < 1:
        raise ValueError(f"extent {extent} and resolution {resolution} give an empty grid")
    return n


def bev_raster(positions, labels, palette, extent: float = 25.0, resolution: float = 0.1) -> np.ndarray:
    """Render to an ``[n, n, 3]`` uint8 array.

    +x points up the image, +y points left (the usual vehicle-frame BEV).
    Cell ``(row, col)`` covers x in ``[extent - (row+1)r, extent - row r)``
    and y in ``[extent - (col+1)r, extent - col r)``. Where several points share
    a cell, the highest one wins; equal heights go to the lower point index.
    """
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(labels) != len(pos):
        raise ValueError(f"{len(pos)} points but {len(labels)} labels")
    palette = np.asarray(palette, dtype=np.uint8).reshape(-1, 3)
    n = bev_grid_shape(extent, resolution)
    img = np.empty((n, n, 3), dtype=np.uint8)
    img[:] = BACKGROUND

    rows = np.floor((extent - pos[:, 0]) / resolution).astype(np.int64)
    cols = np.floor((extent - pos[:, 1]) / resolution).astype(np.int64)
    keep = (rows >= 0) & (rows < n) & (cols >= 0) & (cols < n) & (labels >= 0) & (labels < len(palette))
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return img
    cell = rows[idx] * n + cols[idx]
    # sort by cell, then height descending, then index ascending; first per cell wins
    order = np.lexsort((idx, -pos[idx, 2], cell))
    first = np.ones(order.size, dtype=bool)
    first[1:] = cell[order][1:] != cell[order][:-1]
    win = idx[order[first]]
    img[rows[win], cols[win]] = palette[labels[win]]
    return img


def render_bev(
    positions, labels, palette, out_image, class_names=None, extent: float = 25.0, resolution: float = 0.1
) -> Path:
    """Write the BEV PNG plus a ``.legend.json`` sidecar; returns the image path."""
    out_image = Path(out_image)
    img = bev_raster(positions, labels, palette, extent, resolution)
    out_image.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="RGB").save(out_image)
    names = list(class_names) if class_names is not None else [str(i) for i in range(len(palette))]
    legend = {
        "extent": extent,
        "resolution": resolution,
        "background": list(BACKGROUND),
        "classes": [{"id": i, "name": names[i], "color": [int(c) for c in palette[i]]} for i in range(len(palette))],
    }
    out_image.with_suffix(".legend.json").write_text(json.dumps(legend, indent=2, sort_keys=True) + "\n")
    return out_image
