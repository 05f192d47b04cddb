"""Binary checkpoint files.

Layout: ``b"S2MCKPT1"``, u32 entry count, then per entry a u16 name length, the
UTF-8 name, u8 rank, u32 dims[rank] and float32 little-endian data.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"S2MCKPT1"
CONFIG_PREFIX = "__config."


def write_checkpoint(path: str | Path, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(entries)))
        for name in sorted(entries):
            arr = np.asarray(entries[name])
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise ValueError("truncated checkpoint")
    return buf


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        entries = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(f, 2))
            name = _read_exact(f, nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(f, 1))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            size = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(_read_exact(f, 4 * size), dtype="<f4")
            entries[name] = data.reshape(dims).astype(np.float64)
        return entries


def config_entry(config_hash: str) -> dict[str, np.ndarray]:
    return {CONFIG_PREFIX + config_hash: np.zeros(1)}


def config_hash_of(entries: dict[str, np.ndarray]) -> str | None:
    for k in entries:
        if k.startswith(CONFIG_PREFIX):
            return k[len(CONFIG_PREFIX):]
    return None
