"""PFv1 parameter container.

Layout: ``b"PFv1"`` then, per parameter, a little-endian uint32 name length,
UTF-8 name bytes, uint32 rank, rank x uint32 extents and the float64 payload
in little-endian row-major order. Entries run to end of file.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"PFv1"


class CheckpointError(ValueError):
    pass


def encode(params: Mapping[str, np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for name, value in params.items():
        arr = np.asarray(value, dtype="<f8")  # keeps rank 0, unlike ascontiguousarray
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    return b"".join(chunks)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a PFv1 checkpoint (bad magic)")
    out: dict[str, np.ndarray] = {}
    pos = 4
    try:
        while pos < len(blob):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos : pos + nlen].decode("utf-8")
            if len(name.encode("utf-8")) != nlen:
                raise CheckpointError(f"truncated name at byte {pos}")
            pos += nlen
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            end = pos + 8 * count
            if end > len(blob):
                raise CheckpointError(f"truncated payload for '{name}' at byte {pos}")
            out[name] = np.frombuffer(blob[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
            pos = end
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint at byte {pos}") from exc
    return out


def save(path, params: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(params))
    os.replace(tmp, path)


def load(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())
