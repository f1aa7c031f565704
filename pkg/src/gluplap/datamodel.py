"""Core containers for cubes, endmember libraries and abundance matrices, plus file I/O.

Matrix conventions: a cube stores an L x N matrix (bands x pixels), a library
an L x M matrix (bands x endmembers), an abundance matrix M x N. Pixel j of an
image with geometry (rows, cols) lives in column j = r * cols + c.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, IoError

_HYC1_MAGIC = b"HYC1"
_HYC1_HEADER = struct.Struct("<4sIII4x")  # magic, bands, rows, cols, 4 reserved bytes


def _freeze(a: np.ndarray) -> np.ndarray:
    """Return a read-only, C-contiguous float64 copy of `a`."""
    out = np.array(a, dtype=np.float64, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageGeometry:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise DataError(f"geometry must be positive, got {self.rows}x{self.cols}")

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    def pixel_index(self, r: int, c: int) -> int:
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise DataError(f"pixel ({r}, {c}) outside {self.rows}x{self.cols} image")
        return r * self.cols + c


@dataclass
class HyperCube:
    """Reflectance cube stored as a bands x pixels matrix with image geometry."""

    data: np.ndarray  # L x N, float64
    rows: int
    cols: int

    def __post_init__(self):
        self.data = _freeze(self.data)
        self.validate()

    def validate(self):
        if self.data.ndim != 2:
            raise DataError("cube data must be a 2-D bands x pixels matrix")
        bands, n = self.data.shape
        if bands < 1:
            raise DataError("cube must have at least one spectral band")
        if self.rows < 1 or self.cols < 1 or self.rows * self.cols != n:
            raise DataError(
                f"geometry {self.rows}x{self.cols} does not match {n} pixel columns"
            )
        if not np.isfinite(self.data).all():
            raise DataError("cube contains non-finite values")

    @property
    def band_count(self) -> int:
        return self.data.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.data.shape[1]

    @property
    def geometry(self) -> ImageGeometry:
        return ImageGeometry(self.rows, self.cols)

    def pixel_spectrum(self, r: int, c: int) -> np.ndarray:
        """Spectrum of the pixel at image position (r, c)."""
        return self.data[:, self.geometry.pixel_index(r, c)]


@dataclass
class EndmemberLibrary:
    """Bands x endmembers matrix of pure-material spectra with their names."""

    spectra: np.ndarray  # L x M, float64
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.spectra = _freeze(self.spectra)
        if self.spectra.ndim != 2 or self.spectra.shape[1] < 1:
            raise DataError("library must be a 2-D matrix with at least one column")
        if not self.names:
            self.names = [f"em{i}" for i in range(self.spectra.shape[1])]
        if len(self.names) != self.spectra.shape[1]:
            raise DataError("one name per endmember column is required")
        if not np.isfinite(self.spectra).all():
            raise DataError("library contains non-finite values")
        norms = np.linalg.norm(self.spectra, axis=0)
        if np.any(norms <= 0.0):
            raise DataError("every endmember column must have positive norm")

    @property
    def band_count(self) -> int:
        return self.spectra.shape[0]

    @property
    def n_endmembers(self) -> int:
        return self.spectra.shape[1]


@dataclass
class AbundanceMatrix:
    """Endmembers x pixels matrix of mixing fractions.

    Feasibility (nonnegative entries, unit column sums) is a checked property,
    not a constructor guarantee: solver iterates legitimately violate it.
    """

    data: np.ndarray  # M x N, float64
    geometry: ImageGeometry | None = None

    def __post_init__(self):
        self.data = _freeze(self.data)
        if self.data.ndim != 2:
            raise DataError("abundance data must be a 2-D matrix")
        if not np.isfinite(self.data).all():
            raise DataError("abundance matrix contains non-finite values")
        if self.geometry is None:
            self.geometry = ImageGeometry(1, self.data.shape[1])
        if self.geometry.n_pixels != self.data.shape[1]:
            raise DataError(
                f"geometry {self.geometry.rows}x{self.geometry.cols} does not match "
                f"{self.data.shape[1]} pixel columns"
            )

    @property
    def n_endmembers(self) -> int:
        return self.data.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.data.shape[1]

    def is_feasible(self, eps: float = 1e-4) -> bool:
        """True when entries are >= -eps and every column sums to 1 within eps."""
        if self.data.size == 0:
            return True
        if self.data.min() < -eps:
            return False
        return bool(np.abs(self.data.sum(axis=0) - 1.0).max() <= eps)

    def map_for(self, endmember_index: int) -> np.ndarray:
        """Abundance map of one endmember reshaped to image geometry."""
        if not (0 <= endmember_index < self.n_endmembers):
            raise DataError(f"endmember index {endmember_index} out of range")
        return self.data[endmember_index].reshape(self.geometry.rows, self.geometry.cols)


# ---------------------------------------------------------------------------
# HYC1 binary cube format
# ---------------------------------------------------------------------------

def save_cube(cube: HyperCube, path) -> None:
    """Write `cube` to `path` in the HYC1 binary format (bit-exact round trip)."""
    cube.validate()
    header = _HYC1_HEADER.pack(_HYC1_MAGIC, cube.band_count, cube.rows, cube.cols)
    payload = np.ascontiguousarray(cube.data, dtype="<f8").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write cube to {path}: {exc}") from exc


def load_cube(path) -> HyperCube:
    """Read a HYC1 cube written by :func:`save_cube`."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read cube from {path}: {exc}") from exc

    if len(raw) < _HYC1_HEADER.size:
        raise FormatError(f"{path}: file shorter than the HYC1 header")
    magic, bands, rows, cols = _HYC1_HEADER.unpack_from(raw)
    if magic != _HYC1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {_HYC1_MAGIC!r}")
    if raw[_HYC1_HEADER.size - 4:_HYC1_HEADER.size] != b"\x00\x00\x00\x00":
        raise FormatError(f"{path}: reserved header bytes are not zero")
    if bands < 1 or rows < 1 or cols < 1:
        raise FormatError(f"{path}: non-positive dimensions in header")

    expected = bands * rows * cols * 8
    body = raw[_HYC1_HEADER.size:]
    if len(body) != expected:
        raise FormatError(
            f"{path}: payload holds {len(body)} bytes, header declares {expected}"
        )
    data = np.frombuffer(body, dtype="<f8").reshape(bands, rows * cols)
    if not np.isfinite(data).all():
        raise DataError(f"{path}: payload contains non-finite values")
    return HyperCube(data=data, rows=rows, cols=cols)


# ---------------------------------------------------------------------------
# Library CSV (row 1: names, rows 2..L+1: one band per row)
# ---------------------------------------------------------------------------

def load_library(path) -> EndmemberLibrary:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = [row for row in csv.reader(fh)]
    except OSError as exc:
        raise IoError(f"cannot read library from {path}: {exc}") from exc

    rows = [row for row in rows if row]  # tolerate trailing blank lines
    if not rows:
        raise FormatError(f"{path}: empty library file")
    names = [cell.strip() for cell in rows[0]]
    if len(rows) < 2:
        raise FormatError(f"{path}: library has a header but no band rows")
    width = len(names)
    values = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:]):
        if len(row) != width:
            raise FormatError(
                f"{path}: row {i + 2} has {len(row)} cells, expected {width}"
            )
        try:
            values[i] = [float(cell) for cell in row]
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric cell in row {i + 2}: {exc}") from exc
    return EndmemberLibrary(spectra=values, names=names)


def save_library(library: EndmemberLibrary, path) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(library.names)
            for band in library.spectra:
                writer.writerow([repr(float(v)) for v in band])
    except OSError as exc:
        raise IoError(f"cannot write library to {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Abundance CSV (geometry sidecar line, then M rows x N columns)
# ---------------------------------------------------------------------------

def save_abundance(abund: AbundanceMatrix, path) -> None:
    geo = abund.geometry
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# rows={geo.rows} cols={geo.cols}\n")
            writer = csv.writer(fh, lineterminator="\n")
            for row in abund.data:
                writer.writerow([repr(float(v)) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write abundances to {path}: {exc}") from exc


def load_abundance(path) -> AbundanceMatrix:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            first = fh.readline()
            rows = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise IoError(f"cannot read abundances from {path}: {exc}") from exc

    parts = first.strip().split()
    if len(parts) != 3 or parts[0] != "#" or not parts[1].startswith("rows=") \
            or not parts[2].startswith("cols="):
        raise FormatError(f"{path}: missing '# rows=R cols=C' geometry line")
    try:
        geo = ImageGeometry(int(parts[1][5:]), int(parts[2][5:]))
    except ValueError as exc:
        raise FormatError(f"{path}: bad geometry line: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no abundance rows")
    width = len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(f"{path}: ragged row {i + 2}")
        try:
            values[i] = [float(cell) for cell in row]
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric cell in row {i + 2}: {exc}") from exc
    return AbundanceMatrix(data=values, geometry=geo)
