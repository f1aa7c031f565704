"""Cutting the pixel graph into independently solvable subproblems.

The partitioner is conservative whenever it can be: if the affinity graph has
at least k connected components, whole components are packed into k clusters
(largest first, onto the currently lightest cluster) and no edge is cut.
Only when the graph has fewer components than requested clusters does it fall
back to normalized spectral clustering (normalize the affinity by degrees,
take the top-k eigenvectors, row-normalize, k-means).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from sklearn.cluster import KMeans

from .datamodel import AbundanceMatrix, HyperCube, ImageGeometry
from .errors import ConfigError, DataError, NumericalError
from .graph import AffinityMatrix, Laplacian

_DENSE_EIG_LIMIT = 1200


@dataclass
class PartitionLabels:
    labels: np.ndarray  # N ints in [0, k)
    k: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.size == 0:
            raise DataError("labels must be a non-empty 1-D integer vector")
        if self.labels.min() < 0 or self.labels.max() >= self.k:
            raise DataError("labels must lie in [0, k)")
        counts = np.bincount(self.labels, minlength=self.k)
        if counts.size != self.k or (counts == 0).any():
            raise DataError("every cluster must be non-empty")

    @property
    def n(self) -> int:
        return self.labels.size

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


@dataclass
class Subproblem:
    pixel_indices: np.ndarray       # sorted original column indices
    sub_cube: np.ndarray            # L x n_c
    sub_laplacian: Laplacian        # rebuilt from the affinity submatrix

    @property
    def n_pixels(self) -> int:
        return self.pixel_indices.size


def _pack_components(comp: np.ndarray, n_comp: int, k: int) -> np.ndarray:
    """Assign whole components to k clusters, balancing pixel counts."""
    sizes = np.bincount(comp, minlength=n_comp)
    order = np.lexsort((np.arange(n_comp), -sizes))  # big first, id breaks ties
    loads = np.zeros(k, dtype=np.int64)
    comp_to_cluster = np.empty(n_comp, dtype=np.int64)
    for c in order:
        target = int(np.argmin(loads))
        comp_to_cluster[c] = target
        loads[target] += sizes[c]
    return comp_to_cluster[comp]


def _spectral_embed(W: sp.csr_matrix, k: int, seed: int) -> np.ndarray:
    """Row-normalized top-k eigenvectors of D^{-1/2} W D^{-1/2}."""
    n = W.shape[0]
    deg = np.asarray(W.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    Wn = sp.diags(inv_sqrt) @ W @ sp.diags(inv_sqrt)
    if n <= _DENSE_EIG_LIMIT:
        _, vecs = np.linalg.eigh(Wn.toarray())
        U = vecs[:, -k:]
    else:
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            _, U = spla.eigsh(Wn, k=k, which="LA", v0=v0, tol=1e-8)
        except spla.ArpackError as exc:
            raise NumericalError(f"eigen-solver failed to converge: {exc}") from exc
    norms = np.linalg.norm(U, axis=1)
    norms[norms == 0.0] = 1.0
    return U / norms[:, None]


def _split_until_k(labels: np.ndarray, k: int) -> np.ndarray:
    """Peel single vertices off the largest clusters until all k labels occur."""
    labels = labels.copy()
    used = set(np.unique(labels).tolist())
    missing = [c for c in range(k) if c not in used]
    for c in missing:
        counts = np.bincount(labels, minlength=k)
        donor = int(np.argmax(counts))
        if counts[donor] < 2:
            raise NumericalError("cannot populate all clusters")
        victim = int(np.nonzero(labels == donor)[0][-1])
        labels[victim] = c
    return labels


def spectral_partition(W: AffinityMatrix, k: int, seed: int = 0) -> PartitionLabels:
    """Partition the pixel graph into k clusters, deterministically for a seed.

    Connected components are never split when the graph has at least k of
    them; isolated pixels are grouped into a single background cluster before
    any spectral embedding.
    """
    n = W.n
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"k={k} exceeds the {n} available pixels")
    if k == 1:
        return PartitionLabels(labels=np.zeros(n, dtype=np.int64), k=1)

    n_comp, comp = connected_components(W.weights, directed=False)
    if n_comp >= k:
        return PartitionLabels(labels=_pack_components(comp, n_comp, k), k=k)

    deg = W.degrees()
    isolated = deg == 0.0
    labels = np.empty(n, dtype=np.int64)
    if isolated.any():
        keep = ~isolated
        sub = W.weights[keep][:, keep]
        k_sub = min(k - 1, int(keep.sum()))  # repair pass fills any shortfall
        embedding = _spectral_embed(sub.tocsr(), k_sub, seed)
        km = KMeans(n_clusters=k_sub, init="k-means++", n_init=1, max_iter=300,
                    tol=1e-8, random_state=seed % (2 ** 32))
        labels[keep] = km.fit_predict(embedding)
        labels[isolated] = k - 1
    else:
        embedding = _spectral_embed(W.weights, k, seed)
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=300,
                    tol=1e-8, random_state=seed % (2 ** 32))
        labels = km.fit_predict(embedding).astype(np.int64)
    labels = _split_until_k(labels, k)
    return PartitionLabels(labels=labels, k=k)


def cut_weight(W: AffinityMatrix, labels: PartitionLabels) -> float:
    """Total affinity mass on edges dropped by the partition."""
    if labels.n != W.n:
        raise DataError("labels length does not match the affinity size")
    coo = W.weights.tocoo()
    crossing = labels.labels[coo.row] != labels.labels[coo.col]
    return float(coo.data[crossing].sum() / 2.0)  # stored twice per edge


def extract_subproblems(cube, L: Laplacian, W: AffinityMatrix,
                        labels: PartitionLabels) -> list[Subproblem]:
    """Per-cluster cube columns and Laplacians rebuilt from the affinity blocks.

    Each sub-Laplacian is D_c - W_c with degrees recomputed from the cluster's
    own affinity block, so cross-cluster edges carry no leftover degree mass.
    """
    data = cube.data if isinstance(cube, HyperCube) else np.asarray(cube, dtype=np.float64)
    n = data.shape[1]
    if labels.n != n or W.n != n or L.n != n:
        raise DataError("cube, graph and labels disagree on the pixel count")
    out = []
    for c in range(labels.k):
        idx = np.nonzero(labels.labels == c)[0]
        wc = W.weights[idx][:, idx].tocsr()
        deg_c = np.asarray(wc.sum(axis=1)).ravel()
        lap_c = (sp.diags(deg_c, format="csr") - wc).tocsr()
        lap_c.sort_indices()
        out.append(Subproblem(pixel_indices=idx, sub_cube=data[:, idx],
                              sub_laplacian=Laplacian(matrix=lap_c, degree=deg_c)))
    return out


def stitch(abundances: list[tuple[np.ndarray, np.ndarray]], n: int,
           geometry: ImageGeometry | None = None) -> AbundanceMatrix:
    """Scatter per-cluster abundance columns back into original pixel order."""
    if not abundances:
        raise DataError("nothing to stitch")
    m = np.asarray(abundances[0][1]).shape[0]
    full = np.zeros((m, n))
    seen = np.zeros(n, dtype=bool)
    for idx, block in abundances:
        idx = np.asarray(idx, dtype=np.int64)
        block = np.asarray(block, dtype=np.float64)
        if block.shape != (m, idx.size):
            raise DataError("abundance block shape does not match its indices")
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DataError("pixel index out of range")
        if seen[idx].any():
            raise DataError("overlapping pixel indices across clusters")
        seen[idx] = True
        full[:, idx] = block
    if not seen.all():
        missing = int(np.nonzero(~seen)[0][0])
        raise DataError(f"pixel column {missing} is covered by no cluster")
    return AbundanceMatrix(data=full, geometry=geometry)


def partition_summary(labels: PartitionLabels, cut: float) -> str:
    """Human-readable cluster-size table with the dropped edge weight."""
    lines = ["cluster  pixels", "-------  ------"]
    for c, size in enumerate(labels.cluster_sizes()):
        lines.append(f"{c:7d}  {int(size):6d}")
    lines.append(f"cut weight: {cut!r}")
    return "\n".join(lines)
