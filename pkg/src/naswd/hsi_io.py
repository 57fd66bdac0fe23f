"""Hyperspectral cube container, ENVI-subset file I/O and dark/white calibration.

Cubes are held as ``(lines, samples, bands)`` arrays. On disk a cube is an
ASCII ``.hdr`` header next to a little-endian ``.raw`` payload.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

KINDS = ("raw", "dark", "white", "reflectance")
REFLECTANCE_CEILING = 1.05
DEAD_DELTA = 1e-6
WAVELENGTH_RANGE = (300.0, 1200.0)

# ENVI numeric codes for the payload types we accept.
_DTYPE_CODES = {"f32": 4, "f64": 5, "u16": 12}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
_NUMPY_DTYPES = {"f32": "<f4", "f64": "<f8", "u16": "<u2"}
_INTERLEAVES = ("bsq", "bil", "bip")


class HeaderError(ValueError):
    """Header text is malformed or inconsistent."""


class CubeSizeError(ValueError):
    """Binary payload does not hold samples*lines*bands elements."""


class CalibrationError(ValueError):
    pass


def default_wavelengths(bands: int = 224, lo: float = 397.0, hi: float = 1005.0) -> np.ndarray:
    return np.linspace(lo, hi, bands)


def check_band_axis(wavelengths) -> np.ndarray:
    """Validate a wavelength axis and return it as a float array."""
    wl = np.asarray(wavelengths, dtype=np.float64).ravel()
    if wl.size == 0:
        raise ValueError("wavelength axis is empty")
    if not np.all(np.isfinite(wl)):
        raise ValueError("wavelength axis has non-finite values")
    if np.any(np.diff(wl) <= 0):
        raise ValueError("wavelength axis must be strictly increasing")
    lo, hi = WAVELENGTH_RANGE
    if wl[0] < lo or wl[-1] > hi:
        raise ValueError(f"wavelengths must lie within [{lo:g}, {hi:g}] nm")
    return wl


@dataclass
class HyperCube:
    """A hyperspectral image cube.

    Attributes:
        data: array of shape ``(lines, samples, bands)``.
        wavelengths: band centres in nm, strictly increasing.
        kind: one of ``raw``, ``dark``, ``white`` or ``reflectance``.
        meta: extra header keys carried through I/O.
    """

    data: np.ndarray
    wavelengths: np.ndarray
    kind: str = "raw"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"cube data must be 3-D, got shape {self.data.shape}")
        if self.kind not in KINDS:
            raise ValueError(f"unknown cube kind {self.kind!r}")
        self.wavelengths = check_band_axis(self.wavelengths)
        if self.wavelengths.size != self.data.shape[2]:
            raise ValueError(
                f"{self.wavelengths.size} wavelengths for {self.data.shape[2]} bands")
        if np.issubdtype(self.data.dtype, np.floating) and not np.all(np.isfinite(self.data)):
            raise ValueError("cube contains non-finite values")
        if self.kind == "reflectance" and self.data.size:
            if self.data.min() < 0 or self.data.max() > REFLECTANCE_CEILING:
                raise ValueError("reflectance cube values outside [0, 1.05]")

    @property
    def lines(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass
class EnviHeader:
    samples: int
    lines: int
    bands: int
    interleave: str = "bsq"
    data_type: str = "f32"
    wavelengths: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def validate(self):
        for name in ("samples", "lines", "bands"):
            if getattr(self, name) <= 0:
                raise HeaderError(f"{name} must be positive")
        if self.interleave not in _INTERLEAVES:
            raise HeaderError(f"unsupported interleave {self.interleave!r}")
        if self.data_type not in _DTYPE_CODES:
            raise HeaderError(f"unsupported data type {self.data_type!r}")
        if len(self.wavelengths) != self.bands:
            raise HeaderError(
                f"header lists {len(self.wavelengths)} wavelengths for {self.bands} bands")

    def to_text(self) -> str:
        rows = [
            "ENVI",
            f"samples = {self.samples}",
            f"lines = {self.lines}",
            f"bands = {self.bands}",
            "header offset = 0",
            "file type = ENVI Standard",
            f"data type = {_DTYPE_CODES[self.data_type]}",
            f"interleave = {self.interleave}",
            "byte order = 0",
        ]
        for key in sorted(self.extra):
            rows.append(f"{key} = {self.extra[key]}")
        rows.append("wavelength units = Nanometers")
        rows.append("wavelength = {" + ", ".join(repr(float(w)) for w in self.wavelengths) + "}")
        return "\n".join(rows) + "\n"


_STANDARD_KEYS = {"samples", "lines", "bands", "header offset", "file type", "data type",
                  "interleave", "byte order", "wavelength units", "wavelength"}


def parse_header(text: str) -> EnviHeader:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ENVI":
        raise HeaderError("header must start with 'ENVI'")
    fields = {}
    body = "\n".join(lines[1:])
    pos = 0
    # brace-delimited values may span lines, so scan instead of splitting
    while pos < len(body):
        eol = body.find("\n", pos)
        eol = len(body) if eol < 0 else eol
        line = body[pos:eol]
        if not line.strip():
            pos = eol + 1
            continue
        if "=" not in line:
            raise HeaderError(f"malformed header line: {line.strip()!r}")
        key, value = line.split("=", 1)
        value = value.strip()
        if value.startswith("{") and "}" not in value:
            close = body.find("}", pos)
            if close < 0:
                raise HeaderError(f"unterminated brace list for {key.strip()!r}")
            value = body[body.find("{", pos):close + 1]
            eol = body.find("\n", close)
            eol = len(body) if eol < 0 else eol
        fields[key.strip().lower()] = value
        pos = eol + 1

    try:
        samples = int(fields["samples"])
        lines_ = int(fields["lines"])
        bands = int(fields["bands"])
    except KeyError as exc:
        raise HeaderError(f"missing header key {exc.args[0]!r}") from None
    except ValueError as exc:
        raise HeaderError(f"bad count in header: {exc}") from None

    try:
        code = int(fields.get("data type", "4"))
    except ValueError:
        raise HeaderError("data type must be an integer code") from None
    if code not in _CODE_DTYPES:
        raise HeaderError(f"unsupported data type code {code}")
    if fields.get("byte order", "0").strip() != "0":
        raise HeaderError("only little-endian payloads are supported")
    if int(fields.get("header offset", "0")) != 0:
        raise HeaderError("non-zero header offset is not supported")

    wl_text = fields.get("wavelength")
    if wl_text is None:
        raise HeaderError("missing wavelength list")
    try:
        wavelengths = [float(v) for v in wl_text.strip("{} \n").replace("\n", " ").split(",") if v.strip()]
    except ValueError:
        raise HeaderError("wavelength list is not numeric") from None

    extra = {k: v for k, v in fields.items() if k not in _STANDARD_KEYS}
    header = EnviHeader(samples, lines_, bands, fields.get("interleave", "bsq").strip().lower(),
                        _CODE_DTYPES[code], wavelengths, extra)
    header.validate()
    return header


def payload_path(header_path) -> Path:
    return Path(header_path).with_suffix(".raw")


def read_cube(header_path) -> HyperCube:
    """Read a cube from an ENVI-subset header and its ``.raw`` companion.

    The cube kind comes from the ``cube kind`` header key (default ``raw``).
    """
    header_path = Path(header_path)
    header = parse_header(header_path.read_text())
    payload = payload_path(header_path)
    if not payload.exists():
        raise FileNotFoundError(f"missing binary payload {payload}")
    flat = np.fromfile(payload, dtype=_NUMPY_DTYPES[header.data_type])
    expected = header.samples * header.lines * header.bands
    if flat.size != expected:
        raise CubeSizeError(f"{payload} holds {flat.size} values, header implies {expected}")

    L, S, B = header.lines, header.samples, header.bands
    if header.interleave == "bsq":
        data = flat.reshape(B, L, S).transpose(1, 2, 0)
    elif header.interleave == "bil":
        data = flat.reshape(L, B, S).transpose(0, 2, 1)
    else:
        data = flat.reshape(L, S, B)
    data = np.ascontiguousarray(data).astype(data.dtype.newbyteorder("="), copy=False)

    extra = dict(header.extra)
    kind = extra.pop("cube kind", "raw").strip()
    return HyperCube(data, np.array(header.wavelengths), kind, extra)


def write_cube(cube: HyperCube, path, interleave: str = "bsq", data_type: str | None = None) -> Path:
    """Write ``cube`` as ``<stem>.hdr`` plus ``<stem>.raw``; returns the header path."""
    path = Path(path)
    if path.suffix != ".hdr":
        path = path.with_suffix(".hdr")
    if data_type is None:
        data_type = {np.dtype("float64"): "f64", np.dtype("uint16"): "u16"}.get(
            cube.data.dtype.newbyteorder("="), "f32")
    extra = {str(k): v for k, v in cube.meta.items()}
    extra["cube kind"] = cube.kind
    header = EnviHeader(cube.samples, cube.lines, cube.bands, interleave, data_type,
                        list(cube.wavelengths), extra)
    header.validate()

    data = cube.data
    if interleave == "bsq":
        ordered = data.transpose(2, 0, 1)
    elif interleave == "bil":
        ordered = data.transpose(0, 2, 1)
    else:
        ordered = data
    payload = np.ascontiguousarray(ordered, dtype=_NUMPY_DTYPES[data_type])

    os.makedirs(path.parent, exist_ok=True)
    payload.tofile(payload_path(path))
    path.write_text(header.to_text())
    return path


def _broadcast_reference(ref: HyperCube, raw: HyperCube, name: str) -> np.ndarray:
    if ref.data.shape[1:] != raw.data.shape[1:]:
        raise CalibrationError(
            f"{name} reference shape {ref.data.shape} incompatible with raw {raw.data.shape}")
    if ref.lines not in (1, raw.lines):
        raise CalibrationError(f"{name} reference must have 1 or {raw.lines} lines")
    return ref.data.astype(np.float64)


def reflectance_ratio(raw, dark, white):
    """Unclamped ``(raw - dark) / (white - dark)`` with dead elements set to 0.

    Works on plain arrays that broadcast together. Returns ``(ratio, dead)``
    where ``dead`` is the boolean mask of elements with ``white - dark <= 1e-6``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    dark = np.asarray(dark, dtype=np.float64)
    span = np.asarray(white, dtype=np.float64) - dark
    dead = np.broadcast_to(span <= DEAD_DELTA, np.broadcast(raw, span).shape)
    safe = np.where(span > DEAD_DELTA, span, 1.0)
    ratio = np.where(dead, 0.0, (raw - dark) / safe)
    return ratio, dead


def calibrate_reflectance(raw: HyperCube, dark: HyperCube, white: HyperCube) -> HyperCube:
    """Convert raw counts to relative reflectance using dark and white frames.

    Output is clamped to ``[0, 1.05]``. Elements whose white-dark span is
    ``<= 1e-6`` are set to 0 and counted in ``meta['dead pixels']``.
    """
    for cube, want in ((raw, "raw"), (dark, "dark"), (white, "white")):
        if cube.kind != want:
            raise CalibrationError(f"expected a {want} cube, got kind={cube.kind!r}")
    if not (np.array_equal(raw.wavelengths, dark.wavelengths)
            and np.array_equal(raw.wavelengths, white.wavelengths)):
        raise CalibrationError("raw, dark and white cubes have different wavelength axes")
    d = _broadcast_reference(dark, raw, "dark")
    w = _broadcast_reference(white, raw, "white")
    if np.all(w - d <= DEAD_DELTA):
        raise CalibrationError("white reference is dead everywhere (white - dark <= 1e-6)")

    ratio, dead = reflectance_ratio(raw.data, d, w)
    n_dead = int(dead.sum())
    if n_dead:
        log.warning("calibration: %d dead elements set to 0", n_dead)
    out = np.clip(ratio, 0.0, REFLECTANCE_CEILING).astype(np.float32)
    return HyperCube(out, raw.wavelengths.copy(), "reflectance", {"dead pixels": n_dead})


def band_index_for_wavelength(wavelengths, target_nm: float) -> int:
    """Index of the band nearest ``target_nm``; ties go to the lower index."""
    wl = np.asarray(wavelengths, dtype=np.float64)
    if not (wl[0] - 5.0 <= target_nm <= wl[-1] + 5.0):
        raise ValueError(
            f"{target_nm} nm is outside the axis range [{wl[0]:g}, {wl[-1]:g}] nm (+-5)")
    # argmin returns the first minimum, which is the lower index on a tie
    return int(np.argmin(np.abs(wl - target_nm)))
