"""Readers and writers for the fvecs/ivecs vector file convention.

Each record is a little-endian int32 dimension d followed by d values
(float32 for fvecs, int32 for ivecs). All records in a file must share
the same dimension.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _read_vecs(path: str | Path, dtype: np.dtype) -> np.ndarray:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        return np.empty((0, 0), dtype=dtype)
    if raw.size < 4:
        raise ValueError(f"{path}: truncated header at offset 0")
    d = int(raw[:4].view("<i4")[0])
    if d <= 0:
        raise ValueError(f"{path}: invalid dimension {d} at offset 0")
    record = 4 * (d + 1)
    if raw.size % record != 0:
        raise ValueError(
            f"{path}: truncated record at offset {raw.size - raw.size % record}"
        )
    table = raw.view("<i4").reshape(-1, d + 1)
    if not np.all(table[:, 0] == d):
        bad = int(np.argmax(table[:, 0] != d))
        raise ValueError(f"{path}: inconsistent dimension in record {bad}")
    return table[:, 1:].copy().view(dtype).astype(dtype, copy=False)


def read_fvecs(path: str | Path) -> np.ndarray:
    """Load an fvecs file as an (n, d) float32 array."""
    return _read_vecs(path, np.dtype("<f4"))


def read_ivecs(path: str | Path) -> np.ndarray:
    """Load an ivecs file as an (n, d) int32 array."""
    return _read_vecs(path, np.dtype("<i4"))


def _write_vecs(path: str | Path, arr: np.ndarray, dtype: np.dtype) -> None:
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array")
    n, d = arr.shape
    out = np.empty((n, d + 1), dtype="<i4")
    out[:, 0] = d
    out[:, 1:] = arr.view("<i4") if dtype == np.dtype("<f4") else arr
    out.tofile(path)


def write_fvecs(path: str | Path, arr: np.ndarray) -> None:
    _write_vecs(path, arr, np.dtype("<f4"))


def write_ivecs(path: str | Path, arr: np.ndarray) -> None:
    _write_vecs(path, arr, np.dtype("<i4"))
