"""Acceptance suite: one test per shipped criterion, one PASS line each.

Run with `pytest tests/test_acceptance.py -v -s`. Each test prints its
criterion number and timing; tolerances are pinned here, not configurable.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

import gluplap as gl
from gluplap.solver import SolverConfig, fcls, glup_lap, prox_nonneg_group, x_update
from gluplap.solver import SolverState

import oracles


def _report(num, label, t0, extra=""):
    msg = f"[acceptance] criterion {num} ({label}): PASS in {time.time() - t0:.1f}s"
    if extra:
        msg += f" [{extra}]"
    print(msg)


# ---------------------------------------------------------------------------
# 1. prox operator vs projected-gradient oracle
# ---------------------------------------------------------------------------

def test_criterion_1_prox_oracle_suite():
    t0 = time.time()
    rng = np.random.default_rng(101)
    total = 0
    for m, count in ((1, 334), (3, 333), (15, 333)):
        V = 2.5 * rng.standard_normal((count, m))
        alphas = np.abs(rng.standard_normal(count)) * 2.0
        ours = np.stack([prox_nonneg_group(v, a) for v, a in zip(V, alphas)])
        # near-tie pairs (||v+|| ~ alpha) need long tails: contraction per
        # step is alpha/(alpha + ||z*||)
        ref = oracles.prox_oracle_pg_batch(V, alphas, iters=20000)
        assert np.abs(ours - ref).max() <= 1e-6
        total += count
    assert total == 1000
    elapsed = time.time() - t0
    assert elapsed < 10.0
    _report(1, "prox oracle suite", t0, f"1000 pairs, max err <= 1e-6")


# ---------------------------------------------------------------------------
# 2. edge-sum equals dense trace
# ---------------------------------------------------------------------------

def test_criterion_2_laplacian_identity():
    t0 = time.time()
    rng = np.random.default_rng(202)
    for _ in range(200):
        n = int(rng.integers(10, 201))
        m = int(rng.integers(1, 16))
        density = float(rng.uniform(0.02, 0.3))
        upper = np.triu(rng.random((n, n)) < density, k=1)
        vals = np.where(upper, rng.random((n, n)) + 0.05, 0.0)
        W = gl.AffinityMatrix(sp.csr_matrix(vals + vals.T))
        L = gl.laplacian(W)
        A = rng.standard_normal((m, n))
        sparse_val = gl.laplacian_quadratic(A, L)
        dense_val = oracles.dense_laplacian_quadratic(A, L.matrix.toarray())
        assert abs(sparse_val - dense_val) <= 1e-10 * max(1.0, abs(dense_val))
    elapsed = time.time() - t0
    assert elapsed < 5.0
    _report(2, "Laplacian edge-sum identity", t0, "200 instances")


# ---------------------------------------------------------------------------
# 3. FCLS vs simplex-grid search
# ---------------------------------------------------------------------------

def test_criterion_3_fcls_grid_oracle():
    t0 = time.time()
    rng = np.random.default_rng(303)
    cfg = SolverConfig(rho=0.05, max_iter=4000, eps_abs=1e-10, eps_rel=1e-9)
    for _ in range(20):
        bands = int(rng.integers(6, 12))
        n = int(rng.integers(1, 6))
        R = rng.random((bands, 3)) + 0.4 * np.eye(bands, 3)
        A_true = rng.dirichlet(np.ones(3), size=n).T
        S = R @ A_true + 0.02 * rng.standard_normal((bands, n))
        report = glup_lap(S, R, None, cfg)
        ours = gl.objective(S, R, report.abundances.data, None, 0.0, 0.0)
        grid_best = oracles.fcls_grid_objective(S, R, step=0.01)
        assert ours <= grid_best + 1e-3
    elapsed = time.time() - t0
    assert elapsed < 30.0
    _report(3, "FCLS simplex-grid oracle", t0, "20 instances")


# ---------------------------------------------------------------------------
# 4. feasibility at convergence on the full-size scene
# ---------------------------------------------------------------------------

def test_criterion_4_full_scene_feasibility():
    t0 = time.time()
    lib = gl.make_surrogate_library(224, 5, seed=3)
    scene = gl.SceneConfig(grid=5, square_px=5, gap_px=10, endmember_count=5,
                           layout="data1", seed=30)
    assert scene.side == 75
    cube, _ = gl.generate_scene(scene, lib)
    noisy = gl.add_noise(cube, gl.NoiseSpec(snr_db=30.0, seed=7))
    W = gl.affinity_threshold(noisy, 0.5)
    L = gl.laplacian(W)
    report = glup_lap(noisy, lib, L,
                      SolverConfig(mu=5e-4, lam=0.5, rho=0.05, max_iter=200,
                                   eps_abs=1e-12, eps_rel=1e-12))
    assert report.iterations <= 200
    Z = report.abundances.data
    assert Z.min() >= 0.0  # exact nonnegativity of the returned iterate
    assert Z.min() >= -1e-6
    colsum_dev = np.abs(Z.sum(axis=0) - 1.0).max()
    assert colsum_dev <= 1e-4
    _report(4, "full-scene feasibility", t0,
            f"colsum dev {colsum_dev:.2e}, {report.iterations} iters at rho=0.05")


# ---------------------------------------------------------------------------
# 5. qualitative benchmark-table reproduction
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("layout,m", [("data1", 5), ("data2", 15)])
def test_criterion_5_sweep_beats_fcls_and_decreases(layout, m):
    t0 = time.time()
    bands = 224
    mus = [5e-5, 5e-4, 1e-2]
    lams = [0.01, 0.5, 1.0]
    d2s = [0.05, 0.5, 1.8, 2.5]
    lib = gl.make_surrogate_library(bands, m, seed=3)
    scene = gl.SceneConfig(grid=5, square_px=3, gap_px=3, endmember_count=m,
                           layout=layout, seed=30)
    cube, truth = gl.generate_scene(scene, lib)

    fcls_by_snr, best_by_snr = {}, {}
    for snr in (20.0, 30.0, 40.0):
        noisy = gl.add_noise(cube, gl.NoiseSpec(snr_db=snr, seed=5))
        rep = fcls(noisy, lib, SolverConfig(rho=0.05, max_iter=200))
        fcls_by_snr[snr] = gl.rmse(rep.abundances, truth, "NL",
                                   band_count=bands).value
        best = np.inf
        for d2 in d2s:
            W = gl.affinity_threshold(noisy, d2)
            L = gl.laplacian(W)
            for lam in lams:
                for mu in mus:
                    r = glup_lap(noisy, lib, L,
                                 SolverConfig(mu=mu, lam=lam, rho=0.05,
                                              max_iter=200))
                    val = gl.rmse(r.abundances, truth, "NL",
                                  band_count=bands).value
                    best = min(best, val)
        best_by_snr[snr] = best
        assert best < fcls_by_snr[snr], (layout, snr)

    for lo, hi in ((20.0, 30.0), (30.0, 40.0)):
        assert fcls_by_snr[hi] < fcls_by_snr[lo]
        assert best_by_snr[hi] < best_by_snr[lo]
    elapsed = time.time() - t0
    assert elapsed < 1800.0
    wins = {int(s): round(best_by_snr[s] / fcls_by_snr[s], 3) for s in fcls_by_snr}
    _report(5, f"sweep ordering on {layout}", t0, f"best/FCLS ratios {wins}")


# ---------------------------------------------------------------------------
# 6. partition exactness
# ---------------------------------------------------------------------------

def test_criterion_6_partition_exactness():
    t0 = time.time()
    bands, m = 224, 15
    lib = gl.make_surrogate_library(bands, m, seed=3)
    scene = gl.SceneConfig(grid=5, square_px=3, gap_px=3, endmember_count=m,
                           layout="data2", seed=30)
    cube, _ = gl.generate_scene(scene, lib)
    noisy = gl.add_noise(cube, gl.NoiseSpec(snr_db=20.0, seed=5))
    # threshold slightly below the typical same-truth noisy distance: the
    # background keeps a giant connected piece while the squares fragment,
    # leaving >= 10 components; k=10 then packs whole components
    diffs = noisy.data[:, :-1] - noisy.data[:, 1:]
    typical = np.median(np.einsum("ij,ij->j", diffs, diffs))
    W = gl.affinity_threshold(noisy, 0.85 * typical)
    assert W.nnz // 2 > 1000  # a real graph, not the empty degenerate case
    n_comp, _ = connected_components(W.weights, directed=False)
    assert n_comp >= 10, n_comp
    labels = gl.spectral_partition(W, 10, seed=1)
    cut = gl.cut_weight(W, labels)
    assert cut == 0.0  # affinity is block-diagonal under the partition

    L = gl.laplacian(W)
    cfg = SolverConfig(mu=0.0, lam=0.5, rho=0.05, max_iter=150,
                       eps_abs=1e-13, eps_rel=1e-13)
    full = glup_lap(noisy, lib, L, cfg)
    subs = gl.extract_subproblems(noisy, L, W, labels)
    pieces = []
    for sub in subs:
        rep = glup_lap(sub.sub_cube, lib, sub.sub_laplacian, cfg)
        pieces.append((sub.pixel_indices, rep.abundances.data))
    stitched = gl.stitch(pieces, noisy.n_pixels, geometry=noisy.geometry)
    gap = np.abs(full.abundances.data - stitched.data).max()
    assert gap <= 1e-9
    elapsed = time.time() - t0
    assert elapsed < 300.0
    _report(6, "partition exactness", t0,
            f"{n_comp} components, k=10, max gap {gap:.1e}")


# ---------------------------------------------------------------------------
# 7. affinity block structure of the grouped scene
# ---------------------------------------------------------------------------

def test_criterion_7_affinity_block_structure():
    t0 = time.time()
    bands, m = 448, 15
    lib = gl.make_surrogate_library(bands, m, seed=3)
    scene = gl.SceneConfig(grid=5, square_px=3, gap_px=3, endmember_count=m,
                           layout="data2", seed=30)
    cube, _ = gl.generate_scene(scene, lib)
    labels = gl.group_labels(scene)

    # precondition: square groups separated well beyond the threshold
    reps = np.stack([cube.data[:, labels == g][:, 0] for g in range(6)])
    D = ((reps[:, None, :] - reps[None, :, :]) ** 2).sum(-1)
    assert D[np.triu_indices(6, 1)].min() > 2.0 * 1.8

    noisy = gl.add_noise(cube, gl.NoiseSpec(snr_db=20.0, seed=5))
    W = gl.affinity_threshold(noisy, 1.8)

    # group-first display order: square-row groups 1..5, then background
    order = np.argsort(np.where(labels == 0, 6, labels), kind="stable")
    Wd = W.weights

    n_blocks = 0
    for g in list(range(1, 6)) + [0]:
        idx = np.nonzero(labels == g)[0]
        block = Wd[np.ix_(idx, idx)].toarray()
        assert np.array_equal(block, 1.0 - np.eye(len(idx))), f"group {g}"
        n_blocks += 1
    assert n_blocks >= 6
    for g in range(1, 6):      # zero inter-group square edges
        for h in range(g + 1, 6):
            gi = np.nonzero(labels == g)[0]
            hi = np.nonzero(labels == h)[0]
            assert Wd[np.ix_(gi, hi)].nnz == 0, (g, h)
    # the reordered heatmap is exportable (display form of the same check)
    import tempfile
    from gluplap.evaluate import export_affinity_heatmap
    with tempfile.NamedTemporaryFile(suffix=".pgm") as fh:
        export_affinity_heatmap(W, order, fh.name)
    _report(7, "affinity block structure", t0,
            "6 complete blocks, zero inter-group square edges")


# ---------------------------------------------------------------------------
# 8. x-update finite-difference gradient check
# ---------------------------------------------------------------------------

def test_criterion_8_x_update_gradient():
    t0 = time.time()
    rng = np.random.default_rng(808)
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(2, 6))
        n = int(rng.integers(2, 8))
        bands = int(rng.integers(m + 1, 14))
        S = rng.random((bands, n))
        R = rng.random((bands, m)) + 0.1
        cfg = SolverConfig(mu=float(rng.random()), lam=float(rng.random()),
                           rho=float(rng.random() * 2.0 + 0.01))
        state = SolverState(
            X=rng.standard_normal((m, n)), Y=rng.standard_normal((m, n)),
            Z=rng.standard_normal((m, n)), V=rng.standard_normal((m, n)),
            Lam=rng.standard_normal((m + 1, n)))
        X_new = x_update(state, S, R, cfg)

        def aug(Xv, state=state, S=S, R=R, cfg=cfg):
            return oracles.aug_lagrangian_value(
                Xv, state.Y, state.Z, state.V, state.Lam, S, R, None,
                cfg.mu, cfg.lam, cfg.rho)

        grad = oracles.fd_gradient_x(aug, X_new, h=1e-6)
        rel = np.linalg.norm(grad) / (1.0 + np.linalg.norm(R.T @ S))
        worst = max(worst, rel)
        assert rel <= 1e-4
    _report(8, "x-update gradient check", t0, f"50 states, worst rel {worst:.1e}")


# ---------------------------------------------------------------------------
# 9. end-to-end byte determinism
# ---------------------------------------------------------------------------

DETERMINISM_CONFIG = """
scene.layout = data2
scene.grid = 3
scene.square_px = 2
scene.gap_px = 2
scene.endmembers = 6
scene.bands = 48
scene.seed = 12
noise.snr_db = 25
noise.seed = 3
affinity.mode = threshold
affinity.d_min_sq = 0.4
affinity.reorder = group
partition.k = 2
partition.seed = 8
solver.mu = 0.0005
solver.lambda = 0.2
solver.rho = 0.05
solver.max_iter = 40
sweep.snr_db = 25
sweep.mu = 0.0005
sweep.lambda = 0,0.2
sweep.d_min_sq = 0.4
"""


def test_criterion_9_pipeline_determinism(tmp_path):
    t0 = time.time()
    cfg_path = tmp_path / "exp.cfg"
    cfg_path.write_text(DETERMINISM_CONFIG, encoding="utf-8")

    def run_all(out):
        for cmd in ("generate", "graph", "partition", "unmix", "sweep", "eval"):
            res = subprocess.run(
                [sys.executable, "-m", "gluplap.cli", cmd, "--config",
                 str(cfg_path), "--output-dir", str(out), "--quiet"],
                capture_output=True, text=True)
            assert res.returncode == 0, (cmd, res.stderr)

    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    run_all(out1)
    run_all(out2)
    names1 = sorted(p.name for p in out1.iterdir())
    names2 = sorted(p.name for p in out2.iterdir())
    assert names1 == names2
    suffixes = (".hyc", ".csv", ".json", ".pgm")
    checked = 0
    for name in names1:
        if name.endswith(suffixes):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name
            checked += 1
    assert checked >= 10  # cubes, CSVs, report, manifest, maps, heatmap
    report = json.loads((out1 / "report.json").read_text(encoding="utf-8"))
    assert report["partition_k"] == 2
    _report(9, "pipeline determinism", t0, f"{checked} artifacts byte-identical")
