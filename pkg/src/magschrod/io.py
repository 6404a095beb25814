"""MSFLD1 binary field snapshots and small CSV/JSON writers."""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .fields import Grid3, ScalarField, VectorField

MAGIC = b"MSFLD1"
_HEADER = struct.Struct("<6s3Q3d3dB")


def write_field(path, fld) -> None:
    """Write a field as MSFLD1: little-endian header then complex128 payload.

    The payload is node-major with x1 fastest; for vector fields the three
    components of a node are contiguous.
    """
    g = fld.grid
    rank = 1 if fld.values.ndim == 3 else 3
    head = _HEADER.pack(MAGIC, *g.dims, *g.origin, *g.spacing, rank)
    if rank == 1:
        payload = np.asarray(fld.values, "<c16").transpose(2, 1, 0)
    else:
        payload = np.asarray(fld.values, "<c16").transpose(3, 2, 1, 0)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(payload).tobytes())


def read_field(path):
    data = Path(path).read_bytes()
    if data[:6] != MAGIC:
        raise ValueError(f"{path}: not an MSFLD1 file")
    magic, n1, n2, n3, o1, o2, o3, s1, s2, s3, rank = _HEADER.unpack_from(data)
    grid = Grid3((o1, o2, o3), (s1, s2, s3), (n1, n2, n3))
    arr = np.frombuffer(data, "<c16", offset=_HEADER.size)
    if rank == 1:
        return ScalarField(grid, arr.reshape(n3, n2, n1).transpose(2, 1, 0).copy())
    if rank == 3:
        return VectorField(grid, arr.reshape(n3, n2, n1, 3).transpose(3, 2, 1, 0).copy())
    raise ValueError(f"{path}: bad rank {rank}")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")
