"""Fillet masking, region partitioning and spectrum extraction.

The mask comes from a pseudo-RGB rendering of a reflectance cube converted to
CIE L*a*b* and thresholded per channel. The mask is split into cranial,
medial and caudal thirds along its principal axis, and each part is reduced to
a mean spectrum.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .hsi_io import HyperCube, band_index_for_wavelength

LABELS = ("NB", "MWB", "SWB")
REGIONS = ("cranial", "medial", "caudal")
DEFAULT_RGB_NM = (640.0, 550.0, 460.0)

# linear sRGB -> XYZ, D65 white, 2 degree observer
_SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE_XYZ = _SRGB_TO_XYZ.sum(axis=1)
_LAB_EPS = (6.0 / 29.0) ** 3


class EmptyMaskError(ValueError):
    pass


def pseudo_rgb(cube: HyperCube, r_nm: float = DEFAULT_RGB_NM[0], g_nm: float = DEFAULT_RGB_NM[1],
               b_nm: float = DEFAULT_RGB_NM[2]) -> np.ndarray:
    """Pick the bands nearest three wavelengths as an RGB image in [0, 1]."""
    if cube.kind != "reflectance":
        raise ValueError("pseudo_rgb needs a reflectance cube")
    idx = [band_index_for_wavelength(cube.wavelengths, nm) for nm in (r_nm, g_nm, b_nm)]
    return np.clip(cube.data[:, :, idx].astype(np.float64), 0.0, 1.0)


def _srgb_to_linear(c):
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _lab_f(t):
    return np.where(t > _LAB_EPS, np.cbrt(t), t / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)


def rgb_to_lab(rgb) -> np.ndarray:
    """sRGB in [0, 1] (last axis of length 3) to CIE L*a*b* under D65.

    Inputs are clamped to [0, 1] first.
    """
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    xyz = _srgb_to_linear(rgb) @ _SRGB_TO_XYZ.T / _WHITE_XYZ
    fx, fy, fz = _lab_f(xyz[..., 0]), _lab_f(xyz[..., 1]), _lab_f(xyz[..., 2])
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


@dataclass(frozen=True)
class LabRules:
    """Closed intervals on L*, a* and b*. A pixel passes if all three hold."""

    L: tuple = (35.0, 100.0)
    a: tuple = (-10.0, 45.0)
    b: tuple = (-5.0, 50.0)

    def __post_init__(self):
        for name in ("L", "a", "b"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}* interval is reversed: ({lo}, {hi})")

    @classmethod
    def from_dict(cls, d: dict) -> "LabRules":
        return cls(**{k: tuple(v) for k, v in d.items()})


def largest_component(bits: np.ndarray) -> np.ndarray:
    """Keep the largest 4-connected component; ties go to the first in raster order."""
    labels, n = ndimage.label(bits)
    if n == 0:
        return np.zeros_like(bits, dtype=bool)
    counts = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(counts)) + 1)


def threshold_mask(lab: np.ndarray, rules: LabRules = LabRules()) -> np.ndarray:
    """Boolean fillet mask from a L*a*b* image.

    Thresholds each channel, keeps the largest 4-connected component and fills
    holes (background regions not 4-connected to the border).
    """
    lab = np.asarray(lab)
    bits = np.ones(lab.shape[:2], dtype=bool)
    for ch, (lo, hi) in enumerate((rules.L, rules.a, rules.b)):
        bits &= (lab[..., ch] >= lo) & (lab[..., ch] <= hi)
    mask = ndimage.binary_fill_holes(largest_component(bits))
    if not mask.any():
        raise EmptyMaskError("threshold rules leave an empty mask")
    return mask


def fillet_mask(cube: HyperCube, rules: LabRules = LabRules(), rgb_nm=DEFAULT_RGB_NM) -> np.ndarray:
    return threshold_mask(rgb_to_lab(pseudo_rgb(cube, *rgb_nm)), rules)


@dataclass
class RegionPartition:
    """Flat pixel indices (row * samples + col) of each region."""

    cranial: np.ndarray
    medial: np.ndarray
    caudal: np.ndarray
    shape: tuple

    def __getitem__(self, region: str) -> np.ndarray:
        return getattr(self, region)

    def as_mask(self, region: str) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m.flat[self[region]] = True
        return m


def principal_axis(mask: np.ndarray) -> np.ndarray:
    """Unit major axis of the mask's pixel coordinates, in (row, col) order.

    The sign is fixed so the largest-magnitude component is positive.
    """
    rows, cols = np.nonzero(mask)
    coords = np.column_stack([rows, cols]).astype(np.float64)
    cov = np.cov(coords, rowvar=False, bias=True)
    _, vecs = np.linalg.eigh(cov)
    axis = vecs[:, -1]
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    return axis


def partition_regions(mask: np.ndarray, cranial_end: str = "low") -> RegionPartition:
    """Split mask pixels into equal-count thirds along the principal axis.

    Pixels are ordered by their projection on the major axis. With
    ``cranial_end='low'`` the lowest third is cranial; ``'high'`` flips it.
    Region sizes differ by at most one pixel.
    """
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n < 3:
        raise ValueError(f"mask has {n} pixels; at least 3 are needed for three regions")
    if cranial_end not in ("low", "high"):
        raise ValueError("cranial_end must be 'low' or 'high'")
    flat = np.flatnonzero(mask)
    rows, cols = np.divmod(flat, mask.shape[1])
    proj = np.column_stack([rows, cols]) @ principal_axis(mask)
    order = flat[np.argsort(proj, kind="stable")]
    if cranial_end == "high":
        order = order[::-1]
    parts = np.array_split(order, 3)
    return RegionPartition(*(np.sort(p) for p in parts), shape=mask.shape)


@dataclass
class Spectrum:
    values: np.ndarray
    normalization: str = "none"


def _pixel_rows(cube: HyperCube, pixels) -> np.ndarray:
    pixels = np.asarray(pixels)
    flat_cube = cube.data.reshape(-1, cube.bands)
    if pixels.dtype == bool:
        if pixels.shape != (cube.lines, cube.samples):
            raise ValueError("boolean pixel mask does not match the cube's spatial shape")
        return flat_cube[pixels.ravel()]
    return flat_cube[pixels.ravel().astype(np.intp)]


def mean_spectrum(cube: HyperCube, pixels) -> Spectrum:
    """Per-band mean over a pixel set (boolean mask or flat indices)."""
    if cube.kind != "reflectance":
        raise ValueError("mean_spectrum needs a reflectance cube")
    rows = _pixel_rows(cube, pixels)
    if rows.shape[0] == 0:
        raise ValueError("empty pixel set")
    return Spectrum(rows.astype(np.float64).mean(axis=0), "none")


@dataclass
class ZScoreStats:
    mean: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, X) -> "ZScoreStats":
        X = np.asarray(X, dtype=np.float64)
        sd = X.std(axis=0)
        # constant bands pass through centred but unscaled
        return cls(X.mean(axis=0), np.where(sd > 1e-12, sd, 1.0))


def snv(X) -> np.ndarray:
    """Standard normal variate on the last axis (population sd)."""
    X = np.asarray(X, dtype=np.float64)
    sd = X.std(axis=-1, keepdims=True)
    if np.any(sd <= 1e-12):
        raise ValueError("zero-variance spectrum cannot be SNV-normalized")
    return (X - X.mean(axis=-1, keepdims=True)) / sd


def normalize(X, method: str, stats: ZScoreStats | None = None) -> np.ndarray:
    """Apply ``none``, ``snv`` or ``zscore`` to spectra along the last axis."""
    if method == "none":
        return np.asarray(X, dtype=np.float64)
    if method == "snv":
        return snv(X)
    if method == "zscore":
        if stats is None:
            raise ValueError("zscore normalization needs fitted training statistics")
        return (np.asarray(X, dtype=np.float64) - stats.mean) / stats.sd
    raise ValueError(f"unknown normalization {method!r}")


def normalize_spectrum(s: Spectrum, method: str, stats: ZScoreStats | None = None) -> Spectrum:
    return Spectrum(normalize(s.values, method, stats), method)


@dataclass
class SpectraTable:
    """Per-sample spectra with labels and compression-force targets.

    ``labels`` holds class indices into ``LABELS``; ``forces`` is NaN where a
    force value is absent.
    """

    sample_ids: list
    regions: list
    X: np.ndarray
    labels: np.ndarray
    forces: np.ndarray
    wavelengths: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.forces = np.asarray(self.forces, dtype=np.float64)
        n = len(self.sample_ids)
        if not (len(self.regions) == n == self.X.shape[0] == self.labels.size == self.forces.size):
            raise ValueError("SpectraTable columns have inconsistent lengths")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(LABELS)):
            raise ValueError("labels must be class indices 0..2")

    def __len__(self):
        return len(self.sample_ids)

    def subset(self, idx) -> "SpectraTable":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return SpectraTable([self.sample_ids[i] for i in idx], [self.regions[i] for i in idx],
                            self.X[idx], self.labels[idx], self.forces[idx], self.wavelengths,
                            dict(self.meta))

    def region(self, name: str) -> "SpectraTable":
        return self.subset(np.array([r == name for r in self.regions], dtype=bool))

    def to_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "region", "label", "force_n"]
                       + [f"b{i}" for i in range(self.X.shape[1])])
            for i in range(len(self)):
                force = "" if np.isnan(self.forces[i]) else repr(float(self.forces[i]))
                w.writerow([self.sample_ids[i], self.regions[i], LABELS[self.labels[i]], force]
                           + [repr(float(v)) for v in self.X[i]])

    @classmethod
    def from_csv(cls, path) -> "SpectraTable":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:4] != ["sample_id", "region", "label", "force_n"]:
                raise ValueError(f"{path}: unexpected spectra CSV header")
            ids, regions, labels, forces, rows = [], [], [], [], []
            for rec in reader:
                ids.append(rec[0])
                regions.append(rec[1])
                labels.append(LABELS.index(rec[2]))
                forces.append(float(rec[3]) if rec[3] else np.nan)
                rows.append([float(v) for v in rec[4:]])
        return cls(ids, regions, np.array(rows).reshape(len(ids), len(header) - 4),
                   labels, forces)


def export_mask_png(mask: np.ndarray, path) -> Path:
    """8-bit grayscale PNG, 255 inside the mask and 0 outside."""
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path, format="PNG")
    return path


def extract_sample(cube: HyperCube, sample_id: str, label: str, forces: dict,
                   rules: LabRules = LabRules(), regions: bool = True,
                   cranial_end: str = "low") -> list:
    """Mask a reflectance cube and return table rows for the whole fillet and its regions.

    ``forces`` maps ``whole`` / region names to newtons (missing keys -> absent).
    Each row is ``(sample_id, region, spectrum, label_index, force)``.
    """
    mask = fillet_mask(cube, rules)
    rows = [(sample_id, "whole", mean_spectrum(cube, mask).values, LABELS.index(label),
             forces.get("whole", np.nan))]
    if regions:
        part = partition_regions(mask, cranial_end)
        for name in REGIONS:
            rows.append((sample_id, name, mean_spectrum(cube, part[name]).values,
                         LABELS.index(label), forces.get(name, np.nan)))
    return rows


def table_from_rows(rows, wavelengths=None) -> SpectraTable:
    ids, regions, spectra, labels, forces = zip(*rows)
    return SpectraTable(list(ids), list(regions), np.vstack(spectra), list(labels),
                        list(forces), wavelengths)
