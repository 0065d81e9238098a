"""Binary frame files, PGM export, and flat key=value movie metadata.

Frame file layout (little-endian):

    magic   4s   "SPKL"
    version u16  (currently 1)
    width   u16
    height  u16
    dtype   u8   0 = uint16 raw counts, 1 = float32 processed
    payload row-major samples

PGM export writes binary P5 with maxval 65535 (samples big-endian per
the PGM convention).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = ["write_frame", "read_frame", "write_pgm", "write_meta", "read_meta"]

MAGIC = b"SPKL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHHB")

_DTYPE_TAGS = {0: np.dtype("<u2"), 1: np.dtype("<f4")}


def write_frame(path, pixels: np.ndarray) -> None:
    """Write a 2D frame; dtype must be uint16 (raw) or float32 (processed)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise DataError("frame must be 2D")
    if pixels.dtype == np.uint16:
        tag = 0
    elif pixels.dtype == np.float32:
        tag = 1
    else:
        raise DataError(f"unsupported frame dtype {pixels.dtype}; use uint16 or float32")
    h, w = pixels.shape
    if w > 0xFFFF or h > 0xFFFF:
        raise DataError("frame dimensions exceed the u16 header fields")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, w, h, tag)
    payload = np.ascontiguousarray(pixels).astype(_DTYPE_TAGS[tag], copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_frame(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: truncated frame file")
    magic, version, w, h, tag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    if tag not in _DTYPE_TAGS:
        raise DataError(f"{path}: unknown dtype tag {tag}")
    dtype = _DTYPE_TAGS[tag]
    expected = _HEADER.size + w * h * dtype.itemsize
    if len(raw) != expected:
        raise DataError(f"{path}: payload size mismatch")
    data = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size)
    return data.reshape(h, w).astype(dtype.newbyteorder("="))


def write_pgm(path, pixels: np.ndarray) -> None:
    """Export a frame as 16-bit binary PGM (P5)."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise DataError("frame must be 2D")
    if pixels.dtype == np.uint16:
        samples = pixels
    elif np.issubdtype(pixels.dtype, np.floating):
        samples = np.clip(np.round(pixels.astype(float) * 65535.0), 0, 65535).astype(np.uint16)
    else:
        raise DataError(f"unsupported dtype {pixels.dtype} for PGM export")
    h, w = samples.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(samples.astype(">u2").tobytes())


def write_meta(path, meta: dict) -> None:
    """Flat key=value sidecar; keys sorted for byte-stable output."""
    lines = []
    for key in sorted(meta):
        value = meta[key]
        if isinstance(value, float):
            value = f"{value:.12g}"
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_meta(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}: malformed metadata line {line!r}")
        key, value = line.split("=", 1)
        out[key] = value
    return out
