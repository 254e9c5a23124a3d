"""Grayscale raster type, PGM/PNG I/O and quantization helpers.

All imagery is held as float64 arrays in [0, 1], addressed (row, col).
Quantization to 8 bits happens only where a byte raster is needed
(feature extraction, PGM output).
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

_REC601 = (0.299, 0.587, 0.114)


class ImageFormatError(ValueError):
    """Raised for unreadable, unsupported or degenerate image files."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 2-D luminance raster with values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise ValueError(f"GrayImage needs a 2-D array, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise ValueError("GrayImage has a zero dimension")
        if not np.all(np.isfinite(arr)):
            raise ValueError("GrayImage values must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("GrayImage values must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


@dataclass(frozen=True)
class FrameRef:
    """One frame in the steady-state pool of a heat-flux frame set."""

    frame_set_id: str
    frame_index: int
    source_path: str = field(default="", compare=True)

    @property
    def key(self) -> str:
        return self.source_path or f"{self.frame_set_id}#{self.frame_index}"


def quantize_u8(values) -> np.ndarray:
    """Round-half-up quantization of [0,1] values to uint8."""
    v = np.asarray(values, dtype=np.float64)
    return np.clip(np.floor(v * 255.0 + 0.5), 0, 255).astype(np.uint8)


def to_grayscale_u8(img: GrayImage) -> np.ndarray:
    return quantize_u8(img.data)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ImageFormatError("truncated PGM header")
    return buf[start:pos], pos


def read_pgm_raw(path) -> tuple[np.ndarray, int]:
    """Read a binary (P5) PGM, returning the integer raster and its maxval."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic != b"P5":
        raise ImageFormatError(f"{path}: not a binary PGM (magic {magic!r})")
    try:
        w_tok, pos = _read_token(buf, pos)
        h_tok, pos = _read_token(buf, pos)
        m_tok, pos = _read_token(buf, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header") from exc
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"{path}: zero-dimension image")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"{path}: unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = width * height * dtype.itemsize
    payload = buf[pos : pos + nbytes]
    if len(payload) != nbytes:
        raise ImageFormatError(f"{path}: truncated PGM payload")
    raw = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return raw.astype(np.int64), maxval


def write_pgm_raw(raster: np.ndarray, path, maxval: int = 255) -> None:
    raster = np.asarray(raster)
    if raster.ndim != 2:
        raise ValueError("PGM raster must be 2-D")
    h, w = raster.shape
    if raster.min(initial=0) < 0 or raster.max(initial=0) > maxval:
        raise ValueError("raster values exceed PGM maxval")
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    payload = np.ascontiguousarray(raster.astype(dtype)).tobytes()
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(header + payload)
    os.replace(tmp, path)


def load_gray(path) -> GrayImage:
    """Load a PGM (8/16-bit) or PNG file as a normalized GrayImage."""
    path = Path(path)
    if not path.is_file():
        raise ImageFormatError(f"{path}: no such file")
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:2] == b"P5":
        raw, maxval = read_pgm_raw(path)
        scale = 65535.0 if maxval > 255 else 255.0
        return GrayImage(raw / scale)
    if head == b"\x89PNG\r\n\x1a\n":
        return GrayImage(_load_png(path))
    raise ImageFormatError(f"{path}: unsupported image format")


def _load_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im.load()
        mode = im.mode
        arr = np.asarray(im)
    if arr.size == 0:
        raise ImageFormatError(f"{path}: zero-dimension image")
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        return arr.astype(np.float64) / 65535.0
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode in ("LA",):
        return arr[..., 0].astype(np.float64) / 255.0
    if mode in ("RGB", "RGBA"):
        rgb = arr[..., :3].astype(np.float64) / 255.0
        return np.clip(rgb @ np.array(_REC601), 0.0, 1.0)
    if mode in ("P", "1"):
        with Image.open(path) as im:
            return np.asarray(im.convert("L")).astype(np.float64) / 255.0
    raise ImageFormatError(f"{path}: unsupported PNG mode {mode}")


def save_gray(img: GrayImage, path) -> None:
    """Write an 8-bit binary PGM (round half up from value*255)."""
    write_pgm_raw(to_grayscale_u8(img), path, maxval=255)
