"""Synthetic benchmark scenes: grid-of-squares abundance layouts plus Gaussian noise.

Scenes follow the classic unmixing benchmark: a g x g grid of homogeneous
squares over a constant mixed background. Two layouts are supported:

* ``data1``: the first g*g - g squares each carry a distinct mixture; the
  squares of the last row are identical.
* ``data2``: the g squares of each row share one mixture (g distinct groups).

Square mixtures are seeded Dirichlet(1, ..., 1) draws, so every ground-truth
column lies on the simplex by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datamodel import AbundanceMatrix, EndmemberLibrary, HyperCube
from .errors import ConfigError

LAYOUT_DATA1 = "data1"
LAYOUT_DATA2 = "data2"

#: Background mixture used by the five-endmember benchmark scene.
DEFAULT_BACKGROUND_M5 = (0.1149, 0.0741, 0.2003, 0.2055, 0.4051)


@dataclass
class SceneConfig:
    grid: int = 5
    square_px: int = 5
    gap_px: int = 10
    endmember_count: int = 5
    layout: str = LAYOUT_DATA1
    background_abundance: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.grid < 1 or self.square_px < 1 or self.gap_px < 0:
            raise ConfigError("grid and square_px must be >= 1, gap_px >= 0")
        if self.layout not in (LAYOUT_DATA1, LAYOUT_DATA2):
            raise ConfigError(f"unknown layout {self.layout!r}")
        if self.endmember_count < 1:
            raise ConfigError("endmember_count must be >= 1")
        if self.background_abundance is None:
            if self.endmember_count == 5:
                bg = np.array(DEFAULT_BACKGROUND_M5)
            else:
                bg = np.full(self.endmember_count, 1.0 / self.endmember_count)
        else:
            bg = np.asarray(self.background_abundance, dtype=np.float64)
        if bg.shape != (self.endmember_count,):
            raise ConfigError("background_abundance must have one entry per endmember")
        # accept 4-decimal published mixtures (e.g. sums of 0.9999) and
        # renormalize so the stored vector is exactly on the simplex
        if bg.min() < 0.0 or abs(bg.sum() - 1.0) > 1e-3:
            raise ConfigError("background_abundance must lie on the simplex")
        self.background_abundance = bg / bg.sum()
        if self.side < self.grid * self.square_px:
            raise ConfigError("image side smaller than the packed squares")

    @property
    def tile(self) -> int:
        return self.square_px + self.gap_px

    @property
    def side(self) -> int:
        return self.grid * self.tile

    @property
    def n_pixels(self) -> int:
        return self.side * self.side


@dataclass
class NoiseSpec:
    snr_db: float = 30.0
    seed: int = 0
    noiseless: bool = False

    def __post_init__(self):
        if not self.noiseless and not math.isfinite(self.snr_db):
            raise ConfigError("snr_db must be finite (use noiseless=True to skip noise)")


def _draw_mixture(rng: np.random.Generator, m: int) -> np.ndarray:
    """Simplex mixture active on a random 3-to-5 endmember subset."""
    k = int(rng.integers(3, min(5, m) + 1))
    support = rng.choice(m, size=k, replace=False)
    mix = np.zeros(m)
    mix[support] = rng.dirichlet(np.ones(k))
    return mix


def _square_mixtures(config: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """One simplex mixture per square, laid out row-major over the grid.

    Each distinct square mixes at least 3 active endmembers, so layouts are
    infeasible below 3.
    """
    g = config.grid
    m = config.endmember_count
    if m < 3:
        raise ConfigError(
            f"layout {config.layout!r} requires distinct mixtures of >= 3 "
            f"active endmembers, got only {m}"
        )
    if config.layout == LAYOUT_DATA1:
        distinct = g * g - g
        mixes = np.stack([_draw_mixture(rng, m) for _ in range(distinct + 1)])
        per_square = np.vstack([mixes[:distinct],
                                np.tile(mixes[distinct], (g, 1))])
    else:
        row_mixes = np.stack([_draw_mixture(rng, m) for _ in range(g)])
        per_square = np.repeat(row_mixes, g, axis=0)
    return per_square


def group_labels(config: SceneConfig) -> np.ndarray:
    """Per-pixel group ids: 0 = background, 1.. = square groups.

    Squares that share a mixture share a group: ``data1`` has g*g - g distinct
    groups plus one for the identical last row, ``data2`` one group per row.
    """
    g = config.grid
    side = config.side
    labels = np.zeros(side * side, dtype=np.int64)
    off = config.gap_px // 2
    for sr in range(g):
        for sc in range(g):
            sq = sr * g + sc
            if config.layout == LAYOUT_DATA1:
                group = min(sq, g * g - g) + 1
            else:
                group = sr + 1
            r0 = sr * config.tile + off
            c0 = sc * config.tile + off
            for r in range(r0, r0 + config.square_px):
                lo = r * side + c0
                labels[lo:lo + config.square_px] = group
    return labels


def generate_scene(config: SceneConfig,
                   library: EndmemberLibrary) -> tuple[HyperCube, AbundanceMatrix]:
    """Noiseless cube and ground-truth abundances for a grid-of-squares scene."""
    if library.n_endmembers != config.endmember_count:
        raise ConfigError(
            f"library has {library.n_endmembers} endmembers, "
            f"config expects {config.endmember_count}"
        )
    rng = np.random.default_rng(config.seed)
    per_square = _square_mixtures(config, rng)

    labels = group_labels(config)
    mixtures = np.vstack([config.background_abundance[None, :],
                          _group_mixtures(config, per_square)])
    # contiguous A first so S = R @ A reproduces bit-exactly downstream
    A = np.ascontiguousarray(mixtures[labels].T)  # M x N
    S = library.spectra @ A
    side = config.side
    cube = HyperCube(data=S, rows=side, cols=side)
    truth = AbundanceMatrix(data=A, geometry=cube.geometry)
    return cube, truth


def _group_mixtures(config: SceneConfig, per_square: np.ndarray) -> np.ndarray:
    """Mixture per group id (excluding background), consistent with group_labels."""
    g = config.grid
    if config.layout == LAYOUT_DATA1:
        n_groups = g * g - g + 1
        rows = [per_square[i] for i in range(g * g - g)]
        rows.append(per_square[g * g - g])  # shared last-row mixture
        return np.vstack(rows[:n_groups])
    return per_square[::g]  # one representative square per row


def add_noise(cube: HyperCube, spec: NoiseSpec) -> HyperCube:
    """Add i.i.d. zero-mean Gaussian noise sized to hit the requested SNR.

    The noise variance is ||S||_F^2 / (L * N * 10^(snr_db / 10)), the
    whole-cube signal-power to noise-power convention.
    """
    if spec.noiseless:
        return HyperCube(data=cube.data, rows=cube.rows, cols=cube.cols)
    power = float(np.sum(cube.data ** 2))
    l, n = cube.data.shape
    sigma = math.sqrt(power / (l * n * 10.0 ** (spec.snr_db / 10.0)))
    rng = np.random.default_rng(spec.seed)
    noisy = cube.data + sigma * rng.standard_normal(size=(l, n))
    return HyperCube(data=noisy, rows=cube.rows, cols=cube.cols)


def make_surrogate_library(band_count: int, n_endmembers: int,
                           seed: int = 0) -> EndmemberLibrary:
    """Smooth positive reflectance spectra standing in for a real library.

    Each endmember gets a dominant absorption-like feature in its own region
    of the spectrum (staggered centers, so columns stay well separated, as in
    real mineral libraries) plus a few small seeded secondary bumps and a low
    baseline, clipped into the unit reflectance range.
    """
    if band_count < 1 or n_endmembers < 1:
        raise ConfigError("band_count and n_endmembers must be >= 1")
    rng = np.random.default_rng(seed)
    grid = np.arange(band_count, dtype=np.float64)
    spectra = np.empty((band_count, n_endmembers))
    for i in range(n_endmembers):
        curve = np.full(band_count, 0.02 + 0.05 * rng.random())
        center = (i + 0.5) / n_endmembers * band_count \
            + rng.uniform(-0.15, 0.15) * band_count / n_endmembers
        width = max(1.5, band_count / n_endmembers * rng.uniform(0.38, 0.5))
        curve = curve + rng.uniform(0.8, 0.95) * np.exp(
            -0.5 * ((grid - center) / width) ** 2)
        for _ in range(rng.integers(1, 4)):
            c2 = rng.uniform(0.0, band_count)
            w2 = rng.uniform(0.05, 0.2) * band_count
            curve = curve + rng.uniform(0.02, 0.08) * np.exp(
                -0.5 * ((grid - c2) / w2) ** 2)
        spectra[:, i] = np.clip(curve, 0.01, 1.0)
    names = [f"surrogate{i}" for i in range(n_endmembers)]
    return EndmemberLibrary(spectra=spectra, names=names)
