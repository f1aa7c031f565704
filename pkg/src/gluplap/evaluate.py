"""RMSE evaluation and grayscale (PGM) image export of maps and affinities."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .datamodel import AbundanceMatrix, ImageGeometry
from .errors import DataError, FormatError, IoError
from .graph import AffinityMatrix

#: Column order of the results CSV.
RESULT_COLUMNS = ("dataset", "snr_db", "method", "mu", "lambda", "d_min_sq",
                  "rho", "iterations", "rmse_nl", "rmse_nm")

CONVENTION_NL = "NL"  # divide by pixels * bands (the reported convention)
CONVENTION_NM = "NM"  # divide by pixels * endmembers


@dataclass
class RmseResult:
    value: float
    n_pixels: int
    divisor_convention: str

    def __post_init__(self):
        if self.value < 0.0:
            raise DataError("rmse cannot be negative")


def rmse(est: AbundanceMatrix, truth: AbundanceMatrix,
         convention: str = CONVENTION_NL, band_count: int | None = None) -> RmseResult:
    """Root mean squared abundance error sqrt(||est - truth||_F^2 / divisor).

    The NL convention divides by pixels * spectral bands and therefore needs
    `band_count`; NM divides by pixels * endmembers.
    """
    a = est.data if isinstance(est, AbundanceMatrix) else np.asarray(est)
    b = truth.data if isinstance(truth, AbundanceMatrix) else np.asarray(truth)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: estimate {a.shape} vs truth {b.shape}")
    m, n = a.shape
    if convention == CONVENTION_NL:
        if band_count is None or band_count < 1:
            raise DataError("the NL convention requires a positive band_count")
        divisor = n * band_count
    elif convention == CONVENTION_NM:
        divisor = n * m
    else:
        raise DataError(f"unknown divisor convention {convention!r}")
    diff = a - b
    value = float(np.sqrt(np.sum(diff * diff) / divisor))
    return RmseResult(value=value, n_pixels=n, divisor_convention=convention)


def _quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to 8-bit levels, rounding halves away from zero."""
    clamped = np.clip(values, 0.0, 1.0)
    return np.floor(255.0 * clamped + 0.5).astype(np.uint8)


def _write_pgm(img: np.ndarray, path) -> None:
    rows, cols = img.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write image to {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    """Read back a binary PGM written by this module."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read image from {path}: {exc}") from exc
    parts = raw.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise FormatError(f"{path}: not a binary 8-bit PGM")
    cols, rows = (int(tok) for tok in parts[1].split())
    img = np.frombuffer(parts[3], dtype=np.uint8)
    if img.size != rows * cols:
        raise FormatError(f"{path}: pixel payload does not match header")
    return img.reshape(rows, cols)


def export_abundance_map(A: AbundanceMatrix, endmember_index: int,
                         geometry: ImageGeometry, path) -> None:
    """Write one endmember's abundance map as an 8-bit grayscale PGM."""
    if not (0 <= endmember_index < A.n_endmembers):
        raise DataError(f"endmember index {endmember_index} out of range")
    if geometry.n_pixels != A.n_pixels:
        raise DataError("geometry does not match the abundance pixel count")
    img = _quantize(A.data[endmember_index].reshape(geometry.rows, geometry.cols))
    _write_pgm(img, path)


def export_affinity_heatmap(W: AffinityMatrix, order: np.ndarray, path) -> None:
    """Write the permuted affinity as a PGM, linearly scaled to [0, 255]."""
    order = np.asarray(order, dtype=np.int64)
    n = W.n
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise DataError("order must be a permutation of the pixel indices")
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    img = np.zeros((n, n), dtype=np.uint8)
    coo = W.weights.tocoo()
    if coo.nnz:
        scale = 255.0 / float(coo.data.max())
        img[pos[coo.row], pos[coo.col]] = np.floor(scale * coo.data + 0.5).astype(np.uint8)
    _write_pgm(img, path)


def append_result_row(path, record: dict, extra_columns: tuple[str, ...] = ()) -> None:
    """Append one experiment record to the results CSV, creating the header once."""
    columns = RESULT_COLUMNS + extra_columns
    fresh = not os.path.exists(path)
    try:
        with open(path, "a", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if fresh:
                writer.writerow(columns)
            writer.writerow([_format_cell(record.get(c)) for c in columns])
    except OSError as exc:
        raise IoError(f"cannot append results to {path}: {exc}") from exc


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)
