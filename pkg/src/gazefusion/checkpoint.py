"""Flat binary checkpoints: ordered (name, shape, float64) records.

Layout: 4-byte magic ``GZCK``, one version byte, u32 record count, then
per record a u16 name length + UTF-8 name, u8 ndim, u32 per dimension,
and the raw little-endian float64 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GZCK"
VERSION = 1


def save_records(path, records: list[tuple[str, np.ndarray]]) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", VERSION))
        fh.write(struct.pack("<I", len(records)))
        for name, arr in records:
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_records(path) -> list[tuple[str, np.ndarray]]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    if blob[4] != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {blob[4]}")
    (count,) = struct.unpack_from("<I", blob, 5)
    offset = 9
    records = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        ndim = blob[offset]
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset) if ndim else ()
        offset += 4 * ndim
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        records.append((name, arr.astype(np.float64)))
    return records


def save_model(path, model) -> None:
    save_records(path, model.state_items())


def load_model(path, model) -> None:
    model.load_state_items(load_records(path))
