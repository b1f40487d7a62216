"""Field snapshots (binary and CSV) and the steady-state sidecar."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .spectral import Grid

MAGIC = b"MPFC1"


def write_snapshot(path, values: np.ndarray, t: float = 0.0) -> None:
    """Write ``MPFC1``, dim (u64), N per axis (u64 each), t (f8), then row-major f8 samples, little endian."""
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim not in (1, 2, 3) or len(set(values.shape)) != 1:
        raise ValueError(f"snapshot must be a cubic grid in 1-3 dimensions, got shape {values.shape}")
    header = MAGIC + struct.pack("<Q", values.ndim) + struct.pack(f"<{values.ndim}Q", *values.shape)
    header += struct.pack("<d", t)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes(order="C"))


def read_snapshot(path, padding_factor=2):
    """Return (grid, t, values)."""
    data = Path(path).read_bytes()
    if data[:5] != MAGIC:
        raise ValueError(f"{path}: not an MPFC1 snapshot")
    pos = 5
    (dim,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if dim not in (1, 2, 3):
        raise ValueError(f"{path}: bad dimension {dim}")
    shape = struct.unpack_from(f"<{dim}Q", data, pos)
    pos += 8 * dim
    (t,) = struct.unpack_from("<d", data, pos)
    pos += 8
    if len(set(shape)) != 1:
        raise ValueError(f"{path}: grid must be cubic, got shape {shape}")
    count = int(np.prod(shape))
    if len(data) - pos != 8 * count:
        raise ValueError(f"{path}: expected {count} samples, found {(len(data) - pos) // 8}")
    values = np.frombuffer(data, dtype="<f8", offset=pos).reshape(shape).astype(float)
    return Grid(dim, shape[0], padding_factor), t, values


def write_snapshot_csv(path, grid: Grid, values: np.ndarray) -> None:
    """One row per sample: index per axis, x per axis, value."""
    x = grid.coordinates()
    idx = np.indices(grid.shape)
    names = [f"i{a}" for a in range(grid.dim)] + [f"x{a}" for a in range(grid.dim)] + ["value"]
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        cols = [i.ravel() for i in idx] + [xi.ravel() for xi in x] + [values.ravel()]
        for row in zip(*cols):
            n = grid.dim
            fh.write(",".join([str(int(v)) for v in row[:n]] + [format(float(v), ".17g") for v in row[n:]]) + "\n")


def write_steady(stem, steady) -> None:
    """Snapshot ``stem.mpfc`` plus sidecar ``stem.json``."""
    stem = Path(stem)
    write_snapshot(stem.with_suffix(".mpfc"), steady.phi_inf)
    meta = {"M": steady.M, "lagrange_const": steady.lagrange_const, "residual": steady.residual,
            "energy": steady.energy}
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2))
