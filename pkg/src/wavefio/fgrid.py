"""The .fgrid binary container: arrays plus a structured-text metadata block.

Layout (little endian throughout):
    magic "FGRD" | u16 version | u8 dtype (0=f64, 1=c128) | u8 rank |
    rank * u64 dims | contiguous C-order payload |
    u32 metadata length | UTF-8 "key = value" lines

Designed for trivial reading from any language; the plotting component
consumes these files without importing this package.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = b"FGRD"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}
_CODES = {np.dtype("<f8"): 0, np.dtype("<c16"): 1}


def write_fgrid(path, array: np.ndarray, metadata: dict | None = None) -> None:
    arr = np.ascontiguousarray(array)
    if np.iscomplexobj(arr):
        arr = arr.astype("<c16")
    else:
        arr = arr.astype("<f8")
    code = _CODES[arr.dtype]
    meta_lines = []
    for key, val in (metadata or {}).items():
        meta_lines.append(f"{key} = {val}")
    meta = ("\n".join(meta_lines)).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<HBB", VERSION, code, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(arr.tobytes(order="C"))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)


def read_fgrid(path):
    """Returns (array, metadata dict of strings)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ConfigError(f"{path}: not an fgrid file")
    version, code, rank = struct.unpack_from("<HBB", raw, 4)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported fgrid version {version}")
    dims = struct.unpack_from(f"<{rank}Q", raw, 8)
    off = 8 + 8 * rank
    dt = _DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    arr = np.frombuffer(raw, dtype=dt, count=count, offset=off).reshape(dims).copy()
    off += count * dt.itemsize
    (mlen,) = struct.unpack_from("<I", raw, off)
    meta_raw = raw[off + 4 : off + 4 + mlen].decode("utf-8")
    meta = {}
    for line in meta_raw.splitlines():
        if " = " in line:
            key, val = line.split(" = ", 1)
            meta[key.strip()] = val.strip()
    return arr, meta
