"""Readers and writers for the fvecs / bvecs / ivecs vector file formats.

Every record is a little-endian int32 dimension header followed by d
payload entries (float32, uint8, or int32 respectively), matching the
public SIFT / BIGANN distribution layouts.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .core import check_dataset

_PAYLOAD_DTYPE = {
    "fvecs": np.dtype("<f4"),
    "bvecs": np.dtype("<u1"),
    "ivecs": np.dtype("<i4"),
}


class VecFormatError(ValueError):
    """A vector file violates its format; `offset` is the failing byte position."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _check_format(fmt: str) -> np.dtype:
    try:
        return _PAYLOAD_DTYPE[fmt]
    except KeyError:
        raise ValueError(f"unknown vector format {fmt!r}, expected one of "
                         f"{sorted(_PAYLOAD_DTYPE)}") from None


def read_vectors(path: str | os.PathLike, fmt: str) -> np.ndarray:
    """Read an entire .fvecs/.bvecs/.ivecs file into an (n, d) array.

    fvecs and bvecs files yield float32 datasets; ivecs yields the raw
    int32 matrix (used for neighbor-id files). The record count is
    inferred from the file size; every record must carry the same
    dimension header as the first one.
    """
    payload = _check_format(fmt)
    path = Path(path)
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        raise VecFormatError(f"{path}: empty file", offset=0)
    if raw.size < 4:
        raise VecFormatError(f"{path}: truncated dimension header", offset=0)
    d = int(raw[:4].view("<i4")[0])
    if d < 1:
        raise VecFormatError(f"{path}: invalid dimension {d}", offset=0)
    record_size = 4 + d * payload.itemsize
    if raw.size % record_size != 0:
        raise VecFormatError(
            f"{path}: file size {raw.size} is not a multiple of the "
            f"{record_size}-byte record size for d={d}",
            offset=(raw.size // record_size) * record_size,
        )
    records = raw.reshape(-1, record_size)
    headers = records[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(headers != d)
    if bad.size:
        raise VecFormatError(
            f"{path}: record {bad[0]} has dimension {headers[bad[0]]}, expected {d}",
            offset=int(bad[0]) * record_size,
        )
    values = records[:, 4:].copy().view(payload).reshape(-1, d)
    if fmt == "ivecs":
        return values
    data = values.astype(np.float32)
    if not np.isfinite(data).all():
        raise VecFormatError(f"{path}: non-finite float payload")
    return data


def write_vectors(data, path: str | os.PathLike, fmt: str) -> None:
    """Write an (n, d) array as .fvecs/.bvecs/.ivecs; parses back identically."""
    payload = _check_format(fmt)
    path = Path(path)
    if fmt == "ivecs":
        arr = np.ascontiguousarray(data, dtype="<i4")
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"ivecs payload must be a non-empty 2-d matrix, "
                             f"got shape {np.shape(data)}")
    else:
        arr = check_dataset(data)
        if fmt == "bvecs":
            if ((arr < 0) | (arr > 255) | (arr != np.round(arr))).any():
                raise ValueError("bvecs requires integer values in [0, 255]")
            arr = arr.astype("<u1")
        else:
            arr = arr.astype("<f4")
    n, d = arr.shape
    header = np.full((n, 4), 0, dtype=np.uint8)
    header[:] = np.full((n, 1), d, dtype="<i4").view(np.uint8)
    body = np.ascontiguousarray(arr).view(np.uint8).reshape(n, d * payload.itemsize)
    np.hstack([header, body]).tofile(path)
