"""Seeded synthetic fillet cubes standing in for real scans.

Each sample is an elliptical fillet on a dark dish. A pixel's reflectance is
the archetype at a per-sample severity jittered around the class value, plus
a per-sample smooth perturbation and illumination scale, plus a shift
proportional to the local region's compression force in the 550-650 nm
window, plus per-pixel noise. The force response is scaled by a latent
per-sample tissue state that also deepens the 970 nm water band, so force is
recoverable from a band ratio rather than a single linear read-out. Raw
counts are produced from reflectance with shared dark and white reference
frames.
"""
from __future__ import annotations

import csv
import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .hsi_io import HyperCube, calibrate_reflectance, default_wavelengths, read_cube, write_cube
from .preproc import (LABELS, REGIONS, LabRules, SpectraTable, extract_sample, partition_regions,
                      table_from_rows)

# compression force (N), mean and sd per class and fillet portion
HARDNESS_TABLE = {
    "NB": {"whole": (4.89, 2.47), "cranial": (7.02, 2.23), "medial": (3.14, 1.21), "caudal": (5.33, 2.70)},
    "MWB": {"whole": (5.47, 2.78), "cranial": (8.23, 2.50), "medial": (4.06, 1.54), "caudal": (4.78, 3.02)},
    "SWB": {"whole": (11.12, 7.21), "cranial": (21.03, 6.75), "medial": (11.16, 6.42), "caudal": (13.59, 6.26)},
}
HARDNESS_PARTS = ("whole", "cranial", "medial", "caudal")

# Gaussian bumps (centre nm, width nm, amplitude) added to the shared base curve
ARCHETYPE_BUMPS = {
    "NB": [(545.0, 18.0, -0.060), (575.0, 15.0, -0.050), (760.0, 30.0, -0.020),
           (850.0, 60.0, 0.010), (970.0, 35.0, -0.050)],
    "MWB": [(545.0, 18.0, -0.050), (575.0, 15.0, -0.045), (760.0, 30.0, -0.032),
            (850.0, 60.0, 0.022), (970.0, 35.0, -0.066)],
    "SWB": [(545.0, 18.0, -0.040), (575.0, 15.0, -0.040), (760.0, 30.0, -0.045),
            (850.0, 60.0, 0.035), (970.0, 35.0, -0.085)],
}
DISH_REFLECTANCE = 0.04
WATER_BAND = (970.0, 35.0)
MIN_GAIN = 0.2


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for a named sub-stream of a master seed."""
    return np.random.default_rng([seed, zlib.crc32(name.encode()), *extra])


@dataclass
class SyntheticSpec:
    n_per_class: tuple = (78, 82, 90)
    bands: int = 224
    wavelength_range: tuple = (397.0, 1005.0)
    image: tuple = (24, 16)
    coupling: float = 0.004
    coupling_window: tuple = (550.0, 650.0)
    noise_sd: float = 0.01
    sample_sd: float = 0.006
    illumination_sd: float = 0.05
    tissue_sd: float = 0.02
    tissue_gain: float = 0.5
    severity_sd: float = 0.2
    hardness: dict = field(default_factory=lambda: {k: dict(v) for k, v in HARDNESS_TABLE.items()})
    seed: int = 0

    def __post_init__(self):
        for label in LABELS:
            for part in HARDNESS_PARTS:
                if self.hardness[label][part][1] <= 0:
                    raise ValueError("hardness sd must be positive")
        if self.coupling < 0:
            raise ValueError("coupling must be non-negative so hardness raises the window monotonically")
        if min(self.noise_sd, self.sample_sd, self.illumination_sd, self.tissue_sd,
               self.tissue_gain, self.severity_sd) < 0:
            raise ValueError("noise levels must be non-negative")
        if len(self.n_per_class) != 3 or min(self.n_per_class) < 0:
            raise ValueError("n_per_class needs three non-negative counts")
        if min(self.image) < 6:
            raise ValueError("image must be at least 6x6 pixels")

    @property
    def wavelengths(self) -> np.ndarray:
        return default_wavelengths(self.bands, *self.wavelength_range)

    def to_dict(self):
        d = asdict(self)
        d["hardness"] = {k: {p: list(v) for p, v in parts.items()} for k, parts in self.hardness.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("n_per_class", "wavelength_range", "image", "coupling_window"):
            if key in d:
                d[key] = tuple(d[key])
        if "hardness" in d:
            d["hardness"] = {k: {p: tuple(v) for p, v in parts.items()} for k, parts in d["hardness"].items()}
        return cls(**d)


def base_curve(wl: np.ndarray) -> np.ndarray:
    return 0.35 + 0.25 / (1.0 + np.exp(-(wl - 600.0) / 30.0))


def archetype(label, wl: np.ndarray) -> np.ndarray:
    """Noise-free reflectance at a severity.

    ``label`` is a class name or a real severity on the 0 (NB) .. 2 (SWB)
    scale; bump amplitudes are interpolated between the class archetypes and
    held constant outside that range.
    """
    severity = LABELS.index(label) if isinstance(label, str) else float(label)
    out = base_curve(wl)
    for j, (centre, width, _) in enumerate(ARCHETYPE_BUMPS["NB"]):
        amp = np.interp(severity, [0, 1, 2], [ARCHETYPE_BUMPS[k][j][2] for k in LABELS])
        out = out + amp * np.exp(-0.5 * ((wl - centre) / width) ** 2)
    return out


def coupling_window(spec: SyntheticSpec) -> np.ndarray:
    wl = spec.wavelengths
    lo, hi = spec.coupling_window
    return ((wl >= lo) & (wl <= hi)).astype(np.float64)


def draw_hardness(spec: SyntheticSpec, label: str, part: str, n: int, rng) -> np.ndarray:
    """Normal draws for one class/portion, truncated (clipped) at 0 N."""
    mu, sd = spec.hardness[label][part]
    return np.maximum(rng.normal(mu, sd, size=n), 0.0)


def ellipse_mask(shape, centre, semi_axes) -> np.ndarray:
    rr, cc = np.mgrid[:shape[0], :shape[1]]
    return ((rr - centre[0]) / semi_axes[0]) ** 2 + ((cc - centre[1]) / semi_axes[1]) ** 2 <= 1.0


def reference_frames(spec: SyntheticSpec):
    """Single-line dark and white frames (1 x samples x bands), in raw counts."""
    wl = spec.wavelengths
    cols = spec.image[1]
    rng = stream(spec.seed, "references")
    lamp = 0.35 + 0.65 * np.clip((wl - 380.0) / 420.0, 0.0, 1.0)
    vignette = 1.0 - 0.08 * np.linspace(-1, 1, cols) ** 2
    dark = 60.0 + rng.normal(0.0, 2.0, size=(1, cols, spec.bands))
    white = dark + 3600.0 * vignette[None, :, None] * lamp[None, None, :]
    dark_c = HyperCube(np.round(dark).astype(np.uint16), wl, "dark")
    white_c = HyperCube(np.round(white).astype(np.uint16), wl, "white")
    return dark_c, white_c


@dataclass
class SyntheticSample:
    sample_id: str
    label: str
    forces: dict
    mask: np.ndarray
    reflectance: np.ndarray
    raw: HyperCube


def sample_labels(spec: SyntheticSpec) -> list:
    return [label for label, n in zip(LABELS, spec.n_per_class) for _ in range(n)]


def make_sample(spec: SyntheticSpec, index: int, label: str, dark: HyperCube,
                white: HyperCube) -> SyntheticSample:
    rng = stream(spec.seed, "sample", index)
    wl = spec.wavelengths
    L, S = spec.image
    forces = {part: float(draw_hardness(spec, label, part, 1, rng)[0]) for part in HARDNESS_PARTS}

    centre = (L / 2 - 0.5 + rng.uniform(-0.5, 0.5), S / 2 - 0.5 + rng.uniform(-0.5, 0.5))
    mask = ellipse_mask((L, S), centre, (0.44 * L, 0.40 * S))
    part = partition_regions(mask, "low")

    x = (wl - wl.mean()) / (wl.max() - wl.min())
    smooth = sum(rng.normal() * np.cos(j * np.pi * x + rng.uniform(0, 2 * np.pi)) for j in (1, 2, 3))
    # latent tissue state: deepens the water band and scales the hardness response
    tissue = rng.normal()
    water = np.exp(-0.5 * ((wl - WATER_BAND[0]) / WATER_BAND[1]) ** 2)
    severity = LABELS.index(label) + spec.severity_sd * rng.normal()
    spectrum = archetype(severity, wl) + spec.sample_sd * smooth - spec.tissue_sd * tissue * water
    gain = max(MIN_GAIN, 1.0 + spec.tissue_gain * tissue)
    scale = 1.0 + spec.illumination_sd * rng.normal()
    window = coupling_window(spec) * gain

    refl = np.full((L * S, spec.bands), DISH_REFLECTANCE)
    for name in REGIONS:
        idx = part[name]
        refl[idx] = scale * (spectrum + spec.coupling * forces[name] * window)
    refl += spec.noise_sd * rng.normal(size=refl.shape)
    refl = np.clip(refl, 0.0, 1.0).reshape(L, S, spec.bands)

    d = dark.data.astype(np.float64)
    w = white.data.astype(np.float64)
    raw = np.round(d + refl * (w - d)).astype(np.uint16)
    return SyntheticSample(f"S{index:03d}", label, forces, mask, refl,
                           HyperCube(raw, wl, "raw"))


def iter_samples(spec: SyntheticSpec):
    dark, white = reference_frames(spec)
    for i, label in enumerate(sample_labels(spec)):
        yield make_sample(spec, i, label, dark, white)


def synth_table(spec: SyntheticSpec, rules: LabRules = LabRules(), regions: bool = True) -> SpectraTable:
    """Generate, calibrate, mask and extract every sample without touching disk."""
    dark, white = reference_frames(spec)
    rows = []
    for i, label in enumerate(sample_labels(spec)):
        s = make_sample(spec, i, label, dark, white)
        cube = calibrate_reflectance(s.raw, dark, white)
        rows += extract_sample(cube, s.sample_id, label, s.forces, rules, regions)
    table = table_from_rows(rows, spec.wavelengths)
    table.meta["synthetic_spec"] = spec.to_dict()
    return table


def write_labels(path, samples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label"] + [f"{p}_n" for p in HARDNESS_PARTS])
        for sid, label, forces in samples:
            w.writerow([sid, label] + [repr(forces[p]) for p in HARDNESS_PARTS])


def read_labels(path) -> list:
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            forces = {p: float(rec[f"{p}_n"]) for p in HARDNESS_PARTS if rec.get(f"{p}_n")}
            out.append((rec["sample_id"], rec["label"], forces))
    return out


def synth_dataset(spec: SyntheticSpec, out_dir) -> Path:
    """Write raw cubes, dark/white frames, labels.csv, the generator spec and a manifest."""
    out = Path(out_dir)
    (out / "cubes").mkdir(parents=True, exist_ok=True)
    dark, white = reference_frames(spec)
    write_cube(dark, out / "dark.hdr", data_type="u16")
    write_cube(white, out / "white.hdr", data_type="u16")
    records = []
    for i, label in enumerate(sample_labels(spec)):
        s = make_sample(spec, i, label, dark, white)
        write_cube(s.raw, out / "cubes" / f"{s.sample_id}.hdr", data_type="u16")
        records.append((s.sample_id, label, s.forces))
    write_labels(out / "labels.csv", records)
    (out / "synth_spec.json").write_text(json.dumps(spec.to_dict(), indent=1, sort_keys=True) + "\n")
    manifest = {
        "kind": "synthetic-dataset",
        "seed": spec.seed,
        "streams": ["references", "sample"],
        "artifacts": ["dark.hdr", "white.hdr", "labels.csv", "synth_spec.json"]
                     + [f"cubes/{sid}.hdr" for sid, _, _ in records],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def load_dataset_table(data_dir, rules: LabRules = LabRules(), regions: bool = True,
                       cranial_end: str = "low") -> SpectraTable:
    """Calibrate, mask and extract every cube listed in a dataset directory's labels.csv."""
    data = Path(data_dir)
    dark, white = read_cube(data / "dark.hdr"), read_cube(data / "white.hdr")
    rows = []
    for sid, label, forces in read_labels(data / "labels.csv"):
        cube = calibrate_reflectance(read_cube(data / "cubes" / f"{sid}.hdr"), dark, white)
        rows += extract_sample(cube, sid, label, forces, rules, regions, cranial_end)
    return table_from_rows(rows, dark.wavelengths)


def apply_outlier_filter(table: SpectraTable, ceiling: float = 10.8):
    """Drop rows whose force exceeds ``ceiling`` N; returns ``(table, n_removed)``.

    Rows without a force value are dropped too, since they cannot be checked.
    """
    if ceiling <= 0:
        raise ValueError("ceiling must be positive")
    keep = np.isfinite(table.forces) & (table.forces <= ceiling)
    if not keep.any():
        raise ValueError(f"every row exceeds the {ceiling} N ceiling")
    return table.subset(keep), int((~keep).sum())


def two_class_cube(spec: SyntheticSpec, left: str, right: str, rng=None) -> HyperCube:
    """Reflectance cube whose left and right halves come from two class archetypes."""
    rng = rng or stream(spec.seed, "two-class")
    wl = spec.wavelengths
    L, S = spec.image
    refl = np.empty((L, S, spec.bands))
    half = S // 2
    mid = {lab: HARDNESS_TABLE[lab]["whole"][0] for lab in (left, right)}
    window = coupling_window(spec)
    refl[:, :half] = archetype(left, wl) + spec.coupling * mid[left] * window
    refl[:, half:] = archetype(right, wl) + spec.coupling * mid[right] * window
    refl += spec.noise_sd * rng.normal(size=refl.shape)
    return HyperCube(np.clip(refl, 0, 1).astype(np.float32), wl, "reflectance")
