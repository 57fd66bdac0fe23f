"""Per-pixel class and hardness maps, rendered as PNG, with pixel percentages."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .preproc import LABELS

CLASS_COLORS = np.array([(0, 200, 0), (230, 200, 0), (220, 0, 0)], dtype=np.uint8)
BACKGROUND = (0, 0, 0)
# upper edges are closed: 3.5 N falls in the first bin, 3.50001 N in the second
HARDNESS_EDGES = (3.5, 7.1, 10.8)
HARDNESS_BINS = ("0-3.5 N", "3.5-7.1 N", "7.1-10.8 N", ">10.8 N")
HARDNESS_COLORS = np.array([(255, 237, 160), (254, 178, 76), (240, 59, 32), (128, 0, 38)],
                           dtype=np.uint8)


def _percentages(codes: np.ndarray, n_bins: int) -> np.ndarray:
    if codes.size == 0:
        raise ValueError("map has no masked pixels")
    return 100.0 * np.bincount(codes, minlength=n_bins) / codes.size


def class_percentages(class_map) -> dict:
    """Share of masked pixels (grid value >= 0) per class, in percent."""
    grid = np.asarray(class_map)
    pct = _percentages(grid[grid >= 0].astype(np.int64), len(LABELS))
    return dict(zip(LABELS, pct.tolist()))


def bin_hardness(force_n):
    """Hardness bin 0..3 for a force in N (scalar or array)."""
    f = np.asarray(force_n, dtype=np.float64)
    if np.any(np.isnan(f)) or np.any(f < 0):
        raise ValueError("forces must be non-negative numbers")
    bins = np.searchsorted(HARDNESS_EDGES, f, side="left")
    return int(bins) if bins.ndim == 0 else bins


def hardness_percentages(hardness_map) -> dict:
    grid = np.asarray(hardness_map, dtype=np.float64)
    pct = _percentages(bin_hardness(grid[~np.isnan(grid)]).ravel(), len(HARDNESS_BINS))
    return dict(zip(HARDNESS_BINS, pct.tolist()))


def _save_rgb(rgb: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
    return path


def class_map_rgb(class_map) -> np.ndarray:
    grid = np.asarray(class_map)
    rgb = np.zeros(grid.shape + (3,), dtype=np.uint8)
    rgb[:] = BACKGROUND
    inside = grid >= 0
    rgb[inside] = CLASS_COLORS[grid[inside]]
    return rgb


def render_class_map(class_map, path) -> Path:
    """PNG with NB green, MWB yellow, SWB red and black outside the mask."""
    return _save_rgb(class_map_rgb(class_map), path)


def render_hardness_map(hardness_map, path):
    """PNG with a light-to-dark 4-bin palette; returns ``(path, bin_percentages)``."""
    grid = np.asarray(hardness_map, dtype=np.float64)
    inside = ~np.isnan(grid)
    pct = hardness_percentages(grid)
    rgb = np.zeros(grid.shape + (3,), dtype=np.uint8)
    rgb[inside] = HARDNESS_COLORS[bin_hardness(grid[inside])]
    return _save_rgb(rgb, path), pct


def write_percentages(path, percentages: dict, **extra):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"percentages": percentages, **extra}, indent=1, sort_keys=True) + "\n")
