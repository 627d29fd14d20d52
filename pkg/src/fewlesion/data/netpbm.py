"""Binary PPM (P6) and PGM (P5) reading and writing."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np


class NetpbmError(ValueError):
    pass


def _tokens(blob: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping ``#`` comments.

    Returns the integers and the offset of the single whitespace byte that
    terminates the last one.
    """
    values: list[int] = []
    pos = 2
    n = len(blob)
    while len(values) < count:
        while pos < n and (blob[pos : pos + 1].isspace() or blob[pos] == ord("#")):
            if blob[pos] == ord("#"):
                while pos < n and blob[pos] not in (0x0A, 0x0D):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and blob[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise NetpbmError(f"malformed header: expected an integer at byte offset {start}")
        values.append(int(blob[start:pos]))
    if pos >= n or not blob[pos : pos + 1].isspace():
        raise NetpbmError(f"malformed header: expected whitespace at byte offset {pos}")
    return values, pos


def decode(blob: bytes) -> tuple[np.ndarray, int]:
    """Return ``(pixels, maxval)``; pixels are (H, W) for P5 and (H, W, 3) for P6."""
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"malformed header: unsupported magic {magic!r} at byte offset 0")
    (width, height, maxval), pos = _tokens(blob, 3)
    if width < 1 or height < 1:
        raise NetpbmError(f"malformed header: bad size {width}x{height} at byte offset 2")
    if not 0 < maxval < 65536:
        raise NetpbmError(f"malformed header: maxval {maxval} out of range at byte offset {pos}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    start = pos + 1
    need = width * height * channels * dtype.itemsize
    payload = blob[start : start + need]
    if len(payload) < need:
        raise NetpbmError(f"truncated pixel data: need {need} bytes from byte offset {start}, have {len(payload)}")
    pixels = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return pixels.reshape(shape), maxval


def read(path) -> tuple[np.ndarray, int]:
    try:
        return decode(Path(path).read_bytes())
    except NetpbmError as exc:
        raise NetpbmError(f"{path}: {exc}") from None


def to_bytes(values: np.ndarray) -> np.ndarray:
    """Quantize floats in [0, 1] to 8 bits, ``round(255 * v)`` with halves rounded up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(255.0 * v + 0.5).astype(np.uint8)


def encode(pixels: np.ndarray) -> bytes:
    """Encode 8-bit pixels: (H, W) -> P5, (H, W, 3) -> P6."""
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8:
        raise NetpbmError(f"expected uint8 pixels, got {pixels.dtype}")
    if pixels.ndim == 2:
        magic = b"P5"
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        magic = b"P6"
    else:
        raise NetpbmError(f"cannot encode pixel array of shape {pixels.shape}")
    h, w = pixels.shape[:2]
    return magic + f" {w} {h} 255\n".encode("ascii") + np.ascontiguousarray(pixels).tobytes()


def write(path, pixels: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(pixels))
    os.replace(tmp, path)
