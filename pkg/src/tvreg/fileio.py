"""On-disk formats: the TVT tensor container, CSV matrices, meta files, PGM.

TVT layout (little-endian throughout): magic "TVT1", u32 axis count m,
m u32 extents, u32 subject count n, then n * prod(extents) float64 values,
subject-major, entries within a subject in column-major vectorization
order. CSV files carry no header by default, '.' decimals, one matrix row
per line, full float64 precision.
"""

from __future__ import annotations

import struct

import numpy as np

from .tensor import TensorLayout

MAGIC = b"TVT1"


class FormatError(ValueError):
    """Malformed input file."""


def write_tvt(path, values: np.ndarray, layout: TensorLayout) -> None:
    """Write an n-by-M matrix of vectorized subjects."""
    values = np.ascontiguousarray(values, dtype="<f8")
    if values.ndim != 2 or values.shape[1] != layout.M:
        raise ValueError(
            f"values must be n x {layout.M} for layout {layout.dims}"
        )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(layout.dims)))
        for r in layout.dims:
            fh.write(struct.pack("<I", r))
        fh.write(struct.pack("<I", values.shape[0]))
        fh.write(values.tobytes())


def read_tvt(path) -> tuple[np.ndarray, TensorLayout]:
    """Read a TVT file; returns (n x M values, layout)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0")
    (m,) = struct.unpack_from("<I", raw, 4)
    if m == 0 or m > 32:
        raise FormatError(f"{path}: implausible axis count {m} at offset 4")
    need = 8 + 4 * m + 4
    if len(raw) < need:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    dims = struct.unpack_from(f"<{m}I", raw, 8)
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: zero extent at offset 8")
    (n,) = struct.unpack_from("<I", raw, 8 + 4 * m)
    try:
        layout = TensorLayout(dims)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    M = layout.M
    expected = need + 8 * n * M
    if len(raw) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes, got {len(raw)} "
            f"(mismatch at offset {min(expected, len(raw))})"
        )
    values = np.frombuffer(raw, dtype="<f8", count=n * M, offset=need)
    values = values.reshape(n, M).astype(float)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise FormatError(
            f"{path}: non-finite value at offset {need + 8 * bad}"
        )
    return values, layout


def write_csv_matrix(path, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    np.savetxt(path, matrix, fmt="%.17g", delimiter=",")


def read_csv_matrix(path, skip_header: bool = False) -> np.ndarray:
    try:
        arr = np.loadtxt(
            path, delimiter=",", ndmin=2, skiprows=1 if skip_header else 0
        )
    except Exception as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: non-finite value in matrix")
    return arr


def write_meta(path, entries: dict) -> None:
    with open(path, "w") as fh:
        for key, value in entries.items():
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = format(value, ".17g")
            fh.write(f"{key}={value}\n")


def read_meta(path) -> dict[str, str]:
    entries: dict[str, str] = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def write_pgm(path, values: np.ndarray, dims: tuple[int, int]) -> None:
    """8-bit binary PGM of a vectorized 2D map, min-max scaled.

    The raster is written in vectorization order: width is the first
    extent, height the second, so the header reads "P5 A B 255" for a map
    of dims (A, B). A constant map renders as mid-gray 128.
    """
    a, b = int(dims[0]), int(dims[1])
    v = np.asarray(values, dtype=float).ravel()
    if v.size != a * b:
        raise ValueError(f"map has {v.size} entries, dims {a}x{b} need {a * b}")
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        pix = np.rint((v - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pix = np.full(v.size, 128, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a} {b}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
