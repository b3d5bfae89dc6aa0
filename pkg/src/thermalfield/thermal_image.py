"""16-bit IR image decoding, radiometric conversion and sequence-level thermal mapping.

Thermal values are kept on a [0, 1] scale internally; the 8-bit scale is
only used when writing files.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class PGMDecodeError(ValueError):
    """Raised when a PGM/PPM byte stream cannot be decoded."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class RawThermalImage:
    width: int
    height: int
    counts: np.ndarray  # (height, width) uint16

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be >= 1")
        if self.counts.shape != (self.height, self.width):
            raise ValueError(
                f"counts shape {self.counts.shape} != ({self.height}, {self.width})"
            )


@dataclass(frozen=True)
class RadiometricCalibration:
    k: float
    b: float

    def __post_init__(self):
        if self.k == 0 or not np.isfinite(self.k) or not np.isfinite(self.b):
            raise CalibrationError(f"invalid calibration k={self.k}, b={self.b}")


@dataclass(frozen=True)
class SequenceStats:
    t_min: float
    t_max: float

    def __post_init__(self):
        if self.t_min > self.t_max:
            raise ValueError(f"t_min {self.t_min} > t_max {self.t_max}")


@dataclass(frozen=True)
class ThermalImage:
    width: int
    height: int
    values: np.ndarray  # (height, width) float64 in [0, 1]

    def __post_init__(self):
        if self.values.shape != (self.height, self.width):
            raise ValueError(
                f"values shape {self.values.shape} != ({self.height}, {self.width})"
            )

    @classmethod
    def from_array(cls, values) -> "ThermalImage":
        values = np.asarray(values, dtype=np.float64)
        return cls(values.shape[1], values.shape[0], values)


# --- PNM codecs ---------------------------------------------------------------

_WS = b" \t\n\r\x0b\x0c"


def _parse_header(data: bytes, magic: bytes) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, payload_offset) for a binary PNM header."""
    if not data.startswith(magic):
        raise PGMDecodeError(f"expected magic {magic.decode()}", 0)
    pos = len(magic)
    fields = []
    while len(fields) < 3:
        # whitespace and comments between header tokens
        while pos < len(data) and (data[pos] in _WS or data[pos] == ord("#")):
            if data[pos] == ord("#"):
                while pos < len(data) and data[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        m = re.compile(rb"\d+").match(data, pos)
        if m is None:
            raise PGMDecodeError("malformed header: expected an integer", pos)
        fields.append(int(m.group()))
        pos = m.end()
    if pos >= len(data) or data[pos] not in _WS:
        raise PGMDecodeError("malformed header: missing whitespace after maxval", pos)
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise PGMDecodeError(f"invalid dimensions {width}x{height}", 0)
    return width, height, maxval, pos + 1


def decode_pgm(data: bytes) -> RawThermalImage:
    """Decode a binary 16-bit PGM (P5, maxval 65535, big-endian samples)."""
    width, height, maxval, offset = _parse_header(data, b"P5")
    if maxval != 65535:
        raise PGMDecodeError(f"maxval must be 65535, got {maxval}", offset - 1)
    n = width * height
    if len(data) - offset < 2 * n:
        raise PGMDecodeError(
            f"truncated payload: need {2 * n} bytes, have {len(data) - offset}",
            len(data),
        )
    counts = np.frombuffer(data, dtype=">u2", count=n, offset=offset)
    return RawThermalImage(width, height, counts.astype(np.uint16).reshape(height, width))


def encode_pgm16(img: RawThermalImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n65535\n".encode()
    return header + np.asarray(img.counts, dtype=">u2").tobytes()


def to_8bit(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(values) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def encode_pgm8(img: ThermalImage) -> bytes:
    header = f"P5\n{img.width} {img.height}\n255\n".encode()
    return header + to_8bit(img.values).tobytes()


def decode_pgm8(data: bytes) -> ThermalImage:
    """Read an 8-bit grayscale export back onto the [0, 1] scale."""
    width, height, maxval, offset = _parse_header(data, b"P5")
    if maxval != 255:
        raise PGMDecodeError(f"maxval must be 255, got {maxval}", offset - 1)
    if len(data) - offset < width * height:
        raise PGMDecodeError("truncated payload", len(data))
    px = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    return ThermalImage(width, height, px.reshape(height, width) / 255.0)


def read_thermal_pgm(data: bytes) -> RawThermalImage | ThermalImage:
    """Dispatch on maxval: 16-bit files are raw counts, 8-bit ones are normalized."""
    _, _, maxval, _ = _parse_header(data, b"P5")
    return decode_pgm(data) if maxval == 65535 else decode_pgm8(data)


def encode_ppm(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


def decode_ppm(data: bytes) -> np.ndarray:
    width, height, maxval, offset = _parse_header(data, b"P6")
    if maxval != 255:
        raise PGMDecodeError(f"maxval must be 255, got {maxval}", offset - 1)
    n = width * height * 3
    if len(data) - offset < n:
        raise PGMDecodeError("truncated payload", len(data))
    return np.frombuffer(data, np.uint8, count=n, offset=offset).reshape(height, width, 3)


# --- thermal mapping ----------------------------------------------------------


def raw_to_temperature(img: RawThermalImage, cal: RadiometricCalibration) -> np.ndarray:
    """Linear radiometric conversion ``p / k + b`` of every pixel."""
    if cal.k == 0:
        raise CalibrationError("k must be nonzero")
    return img.counts.astype(np.float64) / cal.k + cal.b


def sequence_stats(temps: Sequence[np.ndarray]) -> SequenceStats:
    """Global temperature extrema over every pixel of every image in a sequence."""
    grids = [np.asarray(t, dtype=np.float64) for t in temps]
    grids = [g for g in grids if g.size]
    if not grids:
        raise ValueError("sequence_stats needs at least one nonempty grid")
    return SequenceStats(
        float(min(g.min() for g in grids)), float(max(g.max() for g in grids))
    )


def normalize(temps: np.ndarray, stats: SequenceStats) -> ThermalImage:
    """Min-max map temperatures onto [0, 1] using sequence-wide extrema.

    A constant sequence (t_min == t_max) maps to all zeros. Values outside the
    extrema, possible when the extrema come from metadata, are clamped.
    """
    temps = np.asarray(temps, dtype=np.float64)
    span = stats.t_max - stats.t_min
    if span == 0:
        values = np.zeros_like(temps)
    else:
        values = np.clip((temps - stats.t_min) / span, 0.0, 1.0)
    return ThermalImage.from_array(values)


def thermal_map(
    raws: Sequence[RawThermalImage],
    cal: RadiometricCalibration,
    stats: SequenceStats | None = None,
) -> tuple[list[ThermalImage], SequenceStats]:
    """Convert a raw sequence to normalized thermal images with shared extrema."""
    temps = [raw_to_temperature(r, cal) for r in raws]
    if stats is None:
        stats = sequence_stats(temps)
    return [normalize(t, stats) for t in temps], stats


# --- pseudo colour ------------------------------------------------------------

# matplotlib-compatible jet segment data: (x, value) breakpoints per channel
_JET_SEGMENTS = {
    "r": ((0.0, 0.0), (0.35, 0.0), (0.66, 1.0), (0.89, 1.0), (1.0, 0.5)),
    "g": ((0.0, 0.0), (0.125, 0.0), (0.375, 1.0), (0.64, 1.0), (0.91, 0.0), (1.0, 0.0)),
    "b": ((0.0, 0.5), (0.11, 1.0), (0.34, 1.0), (0.65, 0.0), (1.0, 0.0)),
}


def _jet_table() -> np.ndarray:
    x = np.arange(256) / 255.0
    cols = []
    for ch in "rgb":
        xp, fp = zip(*_JET_SEGMENTS[ch])
        cols.append(np.interp(x, xp, fp))
    return np.clip(np.floor(np.stack(cols, axis=1) * 255.0 + 0.5), 0, 255).astype(np.uint8)


JET_TABLE = _jet_table()


def colormap_index(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(values) * 255.0 + 0.5), 0, 255).astype(np.intp)


def to_pseudo_color(img: ThermalImage) -> np.ndarray:
    """Jet pseudo-colour rendering, (height, width, 3) uint8."""
    return JET_TABLE[colormap_index(img.values)]


# --- metadata -----------------------------------------------------------------


def load_meta(path: str | Path) -> dict:
    meta = json.loads(Path(path).read_text())
    if not isinstance(meta, dict):
        raise ValueError(f"{path}: meta.json must hold an object")
    return meta


def calibration_from_meta(meta: dict) -> RadiometricCalibration:
    missing = [key for key in ("k", "b") if key not in meta]
    if missing:
        raise CalibrationError(f"calibration missing from metadata: {', '.join(missing)}")
    return RadiometricCalibration(float(meta["k"]), float(meta["b"]))


def stats_from_meta(meta: dict) -> SequenceStats | None:
    if "t_min" in meta and "t_max" in meta:
        return SequenceStats(float(meta["t_min"]), float(meta["t_max"]))
    return None
