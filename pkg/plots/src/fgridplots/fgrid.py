"""Standalone reader for the .fgrid container.

Layout (little endian): magic "FGRD" | u16 version | u8 dtype (0=f64,
1=c128) | u8 rank | rank * u64 dims | C-order payload | u32 metadata
length | UTF-8 "key = value" lines.  Kept free of any dependency on the
producing package.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FGRD"
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}


def read_fgrid(path):
    """Returns (array, metadata dict of strings)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an fgrid file")
    version, code, rank = struct.unpack_from("<HBB", raw, 4)
    if version != 1:
        raise ValueError(f"{path}: unsupported fgrid version {version}")
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


def grid_extent(meta: dict):
    """(x1_min, x1_max, x2_min, x2_max) for imshow from field metadata."""
    e = float(meta["extent"])
    o0 = float(meta["origin0"])
    o1 = float(meta["origin1"])
    return (o0, o0 + e, o1, o1 + e)
