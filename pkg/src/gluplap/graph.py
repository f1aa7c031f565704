"""Pixel-similarity graphs: affinity construction, Laplacian assembly, quadratic form.

Affinities are sparse symmetric N x N matrices over the pixel columns of a
cube. All-pairs distances are computed blockwise and exactly (no approximate
nearest-neighbor indexing); edges are built once for i < j and mirrored, so
symmetry holds bit-exactly by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .datamodel import AbundanceMatrix, HyperCube, ImageGeometry
from .errors import ConfigError, DataError

_BLOCK = 512  # pixel block size for all-pairs distance sweeps


@dataclass
class AffinityMatrix:
    """Sparse symmetric affinity with zero diagonal and positive stored entries."""

    weights: sp.csr_matrix

    def __post_init__(self):
        w = self.weights.tocsr()
        w.eliminate_zeros()
        w.sort_indices()
        if w.shape[0] != w.shape[1]:
            raise DataError("affinity matrix must be square")
        if w.nnz:
            if w.diagonal().any():
                raise DataError("affinity diagonal must be zero")
            if w.data.min() <= 0.0:
                raise DataError("stored affinity entries must be positive")
        # Exact symmetry is cheap to verify on small graphs; large graphs are
        # only ever produced by the mirrored builders below.
        if w.shape[0] <= 2048 and (w != w.T).nnz:
            raise DataError("affinity matrix must be exactly symmetric")
        self.weights = w

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def nnz(self) -> int:
        return self.weights.nnz

    def degrees(self) -> np.ndarray:
        return np.asarray(self.weights.sum(axis=1)).ravel()


@dataclass
class Laplacian:
    """Graph Laplacian D - W with its degree vector."""

    matrix: sp.csr_matrix
    degree: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def empty_affinity(n: int) -> AffinityMatrix:
    return AffinityMatrix(sp.csr_matrix((n, n), dtype=np.float64))


def _pixel_matrix(cube) -> np.ndarray:
    data = cube.data if isinstance(cube, HyperCube) else np.asarray(cube, dtype=np.float64)
    if data.ndim != 2:
        raise DataError("expected a bands x pixels matrix")
    if data.shape[1] == 0:
        raise DataError("graph construction needs at least one pixel")
    return data


def _sq_dist_block(S: np.ndarray, sq: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Squared distances between pixel columns [lo, hi) and all pixels."""
    block = sq[lo:hi, None] + sq[None, :] - 2.0 * (S[:, lo:hi].T @ S)
    np.maximum(block, 0.0, out=block)
    return block


def _mirror_coo(n: int, ii: np.ndarray, jj: np.ndarray, vv: np.ndarray) -> sp.csr_matrix:
    """CSR matrix from upper-triangle (i < j) edge lists, mirrored to symmetric."""
    rows = np.concatenate([ii, jj])
    cols = np.concatenate([jj, ii])
    vals = np.concatenate([vv, vv])
    w = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    w.sort_indices()
    return w


def affinity_threshold(cube, d_min_sq: float) -> AffinityMatrix:
    """Unit-weight affinity connecting pixel pairs with squared distance < d_min_sq."""
    if not (d_min_sq > 0.0):
        raise ConfigError(f"d_min_sq must be positive, got {d_min_sq}")
    S = _pixel_matrix(cube)
    n = S.shape[1]
    sq = np.einsum("ij,ij->j", S, S)
    ii_parts, jj_parts = [], []
    for lo in range(0, n, _BLOCK):
        hi = min(lo + _BLOCK, n)
        block = _sq_dist_block(S, sq, lo, hi)
        # keep i < j only; the mirror restores the lower triangle exactly
        bi, bj = np.nonzero(block < d_min_sq)
        keep = bi + lo < bj
        ii_parts.append((bi[keep] + lo).astype(np.int32))
        jj_parts.append(bj[keep].astype(np.int32))
    ii = np.concatenate(ii_parts)
    jj = np.concatenate(jj_parts)
    return AffinityMatrix(_mirror_coo(n, ii, jj, np.ones(len(ii))))


def affinity_gaussian(cube, sigma: float, k_nn: int | None = None,
                      floor: float | None = None) -> AffinityMatrix:
    """Gaussian-kernel affinity exp(-d^2 / (2 sigma^2)), optionally sparsified.

    With `k_nn` set, an edge survives when either endpoint ranks the other
    among its k nearest neighbors (ties broken by pixel index). With `floor`
    set, weights below the floor are dropped.
    """
    if not (sigma > 0.0):
        raise ConfigError(f"sigma must be positive, got {sigma}")
    if k_nn is not None and k_nn < 1:
        raise ConfigError(f"k_nn must be >= 1, got {k_nn}")
    S = _pixel_matrix(cube)
    n = S.shape[1]
    sq = np.einsum("ij,ij->j", S, S)
    inv = 1.0 / (2.0 * sigma * sigma)

    selected = None
    if k_nn is not None:
        k = min(k_nn, n - 1)
        selected = np.zeros((n, n), dtype=bool) if n <= 8192 else None
        if selected is None:
            raise ConfigError("k_nn sparsification supports at most 8192 pixels")
        for lo in range(0, n, _BLOCK):
            hi = min(lo + _BLOCK, n)
            block = _sq_dist_block(S, sq, lo, hi)
            for r in range(hi - lo):
                row = block[r].copy()
                row[lo + r] = np.inf
                order = np.argsort(row, kind="stable")
                selected[lo + r, order[:k]] = True
        selected = selected | selected.T  # either-endpoint rule

    ii_parts, jj_parts, vv_parts = [], [], []
    for lo in range(0, n, _BLOCK):
        hi = min(lo + _BLOCK, n)
        block = _sq_dist_block(S, sq, lo, hi)
        w = np.exp(-block * inv)
        mask = np.ones_like(w, dtype=bool)
        if selected is not None:
            mask &= selected[lo:hi]
        if floor is not None:
            mask &= w >= floor
        bi, bj = np.nonzero(mask)
        keep = bi + lo < bj
        ii_parts.append((bi[keep] + lo).astype(np.int32))
        jj_parts.append(bj[keep].astype(np.int32))
        vv_parts.append(w[bi[keep], bj[keep]])
    ii = np.concatenate(ii_parts)
    jj = np.concatenate(jj_parts)
    vv = np.concatenate(vv_parts)
    return AffinityMatrix(_mirror_coo(n, ii, jj, vv))


def spatial_affinity(geometry: ImageGeometry, sigma: float) -> AffinityMatrix:
    """Gaussian affinity on pixel image coordinates (all pairs, no cutoff)."""
    if not (sigma > 0.0):
        raise ConfigError(f"sigma must be positive, got {sigma}")
    rr, cc = np.divmod(np.arange(geometry.n_pixels), geometry.cols)
    coords = np.stack([rr, cc]).astype(np.float64)
    return affinity_gaussian(coords, sigma)


def combine_with_spatial(spectral: AffinityMatrix, geometry: ImageGeometry,
                         sigma_spatial: float) -> AffinityMatrix:
    """Elementwise product of a spectral affinity with a spatial Gaussian.

    Evaluated only on the stored entries of `spectral`, since the product is
    zero wherever either factor is.
    """
    if not (sigma_spatial > 0.0):
        raise ConfigError(f"sigma_spatial must be positive, got {sigma_spatial}")
    if geometry.n_pixels != spectral.n:
        raise DataError("geometry does not match the affinity size")
    w = spectral.weights.tocoo(copy=True)
    ri, ci = np.divmod(w.row, geometry.cols)
    rj, cj = np.divmod(w.col, geometry.cols)
    d2 = (ri - rj) ** 2.0 + (ci - cj) ** 2.0
    w.data *= np.exp(-d2 / (2.0 * sigma_spatial * sigma_spatial))
    return AffinityMatrix(w.tocsr())


def laplacian(W: AffinityMatrix) -> Laplacian:
    """Assemble L = D - W with D_ii the row sums of W."""
    deg = W.degrees()
    lap = (sp.diags(deg, format="csr") - W.weights).tocsr()
    lap.sort_indices()
    return Laplacian(matrix=lap, degree=deg)


def laplacian_quadratic(A, L: Laplacian) -> float:
    """Quadratic form tr(A L A^T) evaluated through the sparse edge sum.

    Each undirected edge (j, k) contributes W_jk * ||A[:, j] - A[:, k]||^2
    once, which reproduces the dense trace exactly.
    """
    data = A.data if isinstance(A, AbundanceMatrix) else np.asarray(A, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != L.n:
        raise DataError(
            f"abundance has {data.shape} columns, Laplacian expects {L.n}"
        )
    coo = L.matrix.tocoo()
    off = coo.row != coo.col
    jj, kk, lv = coo.row[off], coo.col[off], coo.data[off]
    if len(jj) == 0:
        return 0.0
    diffs = data[:, jj] - data[:, kk]
    # stored symmetric pairs count each edge twice; -lv recovers W_jk
    return float(0.5 * np.sum(-lv * np.einsum("ij,ij->j", diffs, diffs)))


def export_matrix_market(matrix, path) -> None:
    """Dump a sparse matrix (or Affinity/Laplacian) in Matrix Market text form."""
    from scipy.io import mmwrite

    if isinstance(matrix, AffinityMatrix):
        matrix = matrix.weights
    elif isinstance(matrix, Laplacian):
        matrix = matrix.matrix
    mmwrite(str(path), sp.coo_matrix(matrix))
