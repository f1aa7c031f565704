"""ADMM solver for graph-Laplacian regularized, group-sparse unmixing (GLUP-Lap).

Solves, over abundance matrices A (endmembers x pixels),

    min_A  0.5 ||S - R A||_F^2 + lam * tr(A L A^T) + mu * sum_k ||a_k||_2
    s.t.   A >= 0,  column sums of A equal 1,

where a_k are the rows of A (one group per library endmember). The splitting
uses three primal blocks: X carries the data term, Y the Laplacian term, and
Z the group penalty plus positivity. The linear constraints are X = Y and
B X + C Z = F with the structured operators

    B = [I; 1^T],   C = [-I; 0^T],   F = [0; 1^T],

which are applied implicitly throughout (B^T B = I + 1 1^T in particular).
Per iteration: an M x M dense solve for X, an N x N sparse SPD solve for Y,
a closed-form row-wise proximal step for Z, then gradient ascent on the
multipliers Lam (for B X + C Z = F) and V (for X = Y).

FCLS (fully constrained least squares) is the special case mu = lam = 0 with
an empty graph.

The system matrices R^T R + rho (2 I + 1 1^T) and (2 lam L + rho I) are
factorized once and reused every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .datamodel import AbundanceMatrix, EndmemberLibrary, HyperCube, ImageGeometry
from .errors import ConfigError, DataError, NumericalError
from .graph import Laplacian, laplacian_quadratic

_DENSE_Y_LIMIT = 6000  # above this, the N x N solve falls back to sparse LU


@dataclass
class SolverConfig:
    mu: float = 0.0
    lam: float = 0.0
    rho: float = 0.05
    max_iter: int = 200
    eps_abs: float = 1e-5
    eps_rel: float = 1e-4

    def __post_init__(self):
        if self.mu < 0.0 or self.lam < 0.0:
            raise ConfigError("regularization weights mu and lam must be >= 0")
        if not (self.rho > 0.0):
            raise ConfigError(f"penalty parameter rho must be > 0, got {self.rho}")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if not (self.eps_abs > 0.0 and self.eps_rel > 0.0):
            raise ConfigError("stopping tolerances must be > 0")


@dataclass
class SolverState:
    """ADMM iterates: primal splits X, Y, Z and multipliers V (X=Y), Lam (BX+CZ=F)."""

    X: np.ndarray          # M x N
    Y: np.ndarray          # M x N
    Z: np.ndarray          # M x N
    V: np.ndarray          # M x N
    Lam: np.ndarray        # (M+1) x N
    iter: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.X).all() and np.isfinite(self.Y).all()
                    and np.isfinite(self.Z).all() and np.isfinite(self.V).all()
                    and np.isfinite(self.Lam).all())


@dataclass
class SolveReport:
    abundances: AbundanceMatrix
    iterations: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list)
    residual_trace: list[tuple[float, float]] = field(default_factory=list)
    active_rows: list[int] = field(default_factory=list)


def initial_state(m: int, n: int) -> SolverState:
    """Feasible symmetric start: all splits at the uniform simplex point."""
    uniform = np.full((m, n), 1.0 / m)
    return SolverState(X=uniform.copy(), Y=uniform.copy(), Z=uniform.copy(),
                       V=np.zeros((m, n)), Lam=np.zeros((m + 1, n)))


def _as_matrix(obj, kind: str) -> np.ndarray:
    if isinstance(obj, HyperCube):
        return obj.data
    if isinstance(obj, EndmemberLibrary):
        return obj.spectra
    arr = np.asarray(obj, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"{kind} must be a 2-D matrix")
    return arr


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

def group_row_norms(A: np.ndarray) -> np.ndarray:
    return np.linalg.norm(A, axis=1)


def objective(S, R, A, L: Laplacian | None, mu: float, lam: float) -> float:
    """Value of the regularized unmixing objective at abundance matrix A."""
    Sm = _as_matrix(S, "cube")
    Rm = _as_matrix(R, "library")
    Am = A.data if isinstance(A, AbundanceMatrix) else np.asarray(A, dtype=np.float64)
    if Rm.shape[0] != Sm.shape[0] or Am.shape != (Rm.shape[1], Sm.shape[1]):
        raise DataError(
            f"inconsistent shapes: S {Sm.shape}, R {Rm.shape}, A {Am.shape}"
        )
    resid = Sm - Rm @ Am
    value = 0.5 * float(np.sum(resid * resid))
    if lam != 0.0 and L is not None and L.matrix.nnz:
        value += lam * laplacian_quadratic(Am, L)
    if mu != 0.0:
        value += mu * float(group_row_norms(Am).sum())
    return value


def _objective_tracked(Sm, Rm, Z, lap_csr, mu, lam) -> float:
    """Loop-internal objective at Z; lap term via one sparse mat-mat."""
    resid = Sm - Rm @ Z
    value = 0.5 * float(np.sum(resid * resid))
    if lap_csr is not None:
        value += lam * float(np.sum((lap_csr @ Z.T).T * Z))
    if mu != 0.0:
        value += mu * float(group_row_norms(Z).sum())
    return value


# ---------------------------------------------------------------------------
# X update: (R^T R + rho (2 I + 1 1^T)) X = RHS
# ---------------------------------------------------------------------------

def x_system_factor(R, rho: float):
    """Cholesky factor of the M x M X-step system matrix."""
    Rm = _as_matrix(R, "library")
    m = Rm.shape[1]
    G = Rm.T @ Rm + rho * (2.0 * np.eye(m) + np.ones((m, m)))
    try:
        return sla.cho_factor(G, lower=True)
    except sla.LinAlgError as exc:  # rho > 0 makes this impossible in theory
        raise NumericalError(f"X-step system factorization failed: {exc}") from exc


def x_update(state: SolverState, S, R, config: SolverConfig,
             factor=None, rts: np.ndarray | None = None) -> np.ndarray:
    """Minimizer of the augmented Lagrangian in X (exact M x M solve)."""
    Sm = _as_matrix(S, "cube")
    Rm = _as_matrix(R, "library")
    rho = config.rho
    if factor is None:
        factor = x_system_factor(Rm, rho)
    if rts is None:
        rts = Rm.T @ Sm
    m = state.m
    lam_top = state.Lam[:m]
    lam_bot = state.Lam[m]
    # RHS = R^T S - B^T [Lam + rho (C Z - F)] - V + rho Y, with
    # B^T [..] = (Lam_top - rho Z) + 1 (lam_bot - rho 1^T)
    rhs = rts - lam_top + rho * state.Z - (lam_bot - rho)[None, :] - state.V \
        + rho * state.Y
    return sla.cho_solve(factor, rhs)


# ---------------------------------------------------------------------------
# Y update: Y (2 lam L + rho I) = V + rho X
# ---------------------------------------------------------------------------

class _YSolver:
    """Factorization of (2 lam L + rho I), dense Cholesky or sparse LU."""

    def __init__(self, L: Laplacian, lam: float, rho: float):
        n = L.n
        K = (2.0 * lam) * L.matrix + rho * sp.identity(n, format="csr")
        try:
            if n <= _DENSE_Y_LIMIT:
                self._dense = sla.cho_factor(K.toarray(), lower=True,
                                             overwrite_a=True)
                self._sparse = None
            else:
                self._dense = None
                self._sparse = spla.splu(K.tocsc())
        except (sla.LinAlgError, RuntimeError) as exc:
            raise NumericalError(f"Y-step factorization failed: {exc}") from exc

    def solve_t(self, rhs_t: np.ndarray) -> np.ndarray:
        """Solve K U = rhs_t for U (rhs_t is N x M)."""
        if self._dense is not None:
            return sla.cho_solve(self._dense, rhs_t)
        return self._sparse.solve(rhs_t)


def y_system_factor(L: Laplacian, lam: float, rho: float) -> _YSolver:
    return _YSolver(L, lam, rho)


def y_update(state: SolverState, L: Laplacian | None, config: SolverConfig,
             factor: _YSolver | None = None) -> np.ndarray:
    """Minimizer of the augmented Lagrangian in Y.

    With lam = 0 or an empty graph the system collapses to rho I and the
    update is exactly X + V / rho.
    """
    if config.lam == 0.0 or L is None or L.matrix.nnz == 0:
        return state.X + state.V / config.rho
    if factor is None:
        factor = _YSolver(L, config.lam, config.rho)
    rhs_t = (state.V + config.rho * state.X).T
    return factor.solve_t(rhs_t).T


# ---------------------------------------------------------------------------
# Z update: row-wise proximal step of the nonnegative group penalty
# ---------------------------------------------------------------------------

def prox_nonneg_group(v: np.ndarray, alpha: float) -> np.ndarray:
    """prox of f(z) = alpha ||z||_2 + indicator(z >= 0) at the point v.

    Returns 0 when ||max(v, 0)||_2 <= alpha, else the positive part shrunk
    by (1 - alpha / ||max(v, 0)||_2).
    """
    if alpha < 0.0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    p = np.maximum(np.asarray(v, dtype=np.float64), 0.0)
    norm = float(np.linalg.norm(p))
    if norm <= alpha:
        return np.zeros_like(p)
    return (1.0 - alpha / norm) * p


def prox_nonneg_group_rows(V: np.ndarray, alpha: float) -> np.ndarray:
    """Row-wise application of :func:`prox_nonneg_group` to a matrix."""
    P = np.maximum(V, 0.0)
    if alpha == 0.0:
        return P
    norms = np.linalg.norm(P, axis=1)
    scale = np.zeros_like(norms)
    active = norms > alpha
    scale[active] = 1.0 - alpha / norms[active]
    return P * scale[:, None]


def z_update(state: SolverState, config: SolverConfig) -> np.ndarray:
    """Exact Z step: per endmember row k, prox at v_k = x_k + Lam_k / rho.

    Groups are the rows of Z (one per library endmember), matching the
    objective's row-sum group penalty; the multiplier rows enter through
    C^T Lam = -Lam_top, flipping their sign into the prox center.
    """
    rho = config.rho
    m = state.m
    V = state.X + state.Lam[:m] / rho
    return prox_nonneg_group_rows(V, config.mu / rho)


# ---------------------------------------------------------------------------
# Multiplier updates and stopping rule
# ---------------------------------------------------------------------------

def constraint_residual(X: np.ndarray, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Blocks of B X + C Z - F: (X - Z, column sums of X minus 1)."""
    return X - Z, X.sum(axis=0) - 1.0


def dual_update(state: SolverState, config: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Gradient-ascent multiplier step; returns (Lam', V')."""
    rho = config.rho
    m = state.m
    top, bot = constraint_residual(state.X, state.Z)
    lam_new = state.Lam.copy()
    lam_new[:m] += rho * top
    lam_new[m] += rho * bot
    v_new = state.V + rho * (state.X - state.Y)
    return lam_new, v_new


def residuals(state: SolverState, prev_state: SolverState,
              config: SolverConfig) -> tuple[float, float]:
    """Primal and dual residual norms of the stacked constraint system.

    primal = || [B X + C Z - F; X - Y] ||_F
    dual   = rho * || [C^T C (Z - Z_prev); Y - Y_prev] ||_F   (C^T C = I)
    """
    top, bot = constraint_residual(state.X, state.Z)
    primal = float(np.sqrt(np.sum(top * top) + np.sum(bot * bot)
                           + np.sum((state.X - state.Y) ** 2)))
    dz = state.Z - prev_state.Z
    dy = state.Y - prev_state.Y
    dual = config.rho * float(np.sqrt(np.sum(dz * dz) + np.sum(dy * dy)))
    return primal, dual


def stopping_thresholds(state: SolverState, config: SolverConfig) -> tuple[float, float]:
    """Absolute-plus-relative tolerances for the primal and dual residuals."""
    m, n = state.m, state.n
    ax_norm = np.sqrt(2.0 * np.sum(state.X ** 2) + np.sum(state.X.sum(axis=0) ** 2))
    bz_norm = np.sqrt(np.sum(state.Z ** 2) + np.sum(state.Y ** 2))
    c_norm = np.sqrt(n)
    eps_pri = np.sqrt((2 * m + 1) * n) * config.eps_abs \
        + config.eps_rel * max(ax_norm, bz_norm, c_norm)
    bta = state.Lam[:m] + state.Lam[m][None, :] + state.V  # B^T Lam + V
    eps_dual = np.sqrt(m * n) * config.eps_abs \
        + config.eps_rel * float(np.linalg.norm(bta))
    return float(eps_pri), float(eps_dual)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def glup_lap(S, R, L: Laplacian | None, config: SolverConfig,
             geometry: ImageGeometry | None = None) -> SolveReport:
    """Run the full ADMM loop and return the abundance estimate.

    The fidelity term is normalized internally by the RMS endmember norm
    (the usual rescaling in this solver family), with mu and lam divided by
    the same factor squared; the minimizer is exactly that of the original
    problem, but the penalty parameter then acts on a unit-scale system.

    The reported abundance matrix is the Z iterate, which is exactly
    nonnegative by construction; the sum-to-one constraint holds up to the
    primal residual. The objective trace is reported in original units.
    """
    Sm_raw = _as_matrix(S, "cube")
    Rm_raw = _as_matrix(R, "library")
    if Rm_raw.shape[0] != Sm_raw.shape[0]:
        raise DataError(
            f"cube has {Sm_raw.shape[0]} bands but library has {Rm_raw.shape[0]}"
        )
    n = Sm_raw.shape[1]
    m = Rm_raw.shape[1]
    if L is not None and L.n != n:
        raise DataError(f"Laplacian is {L.n}x{L.n} but the cube has {n} pixels")
    if geometry is None and isinstance(S, HyperCube):
        geometry = S.geometry

    rho = config.rho
    if not (rho > 0.0):
        raise ConfigError("rho must be > 0")

    scale = float(np.sqrt(np.mean(np.sum(Rm_raw * Rm_raw, axis=0))))
    if not (scale > 0.0 and np.isfinite(scale)):
        raise DataError("library columns must have positive finite norms")
    Sm = Sm_raw / scale
    Rm = Rm_raw / scale
    work = replace(config, mu=config.mu / scale ** 2, lam=config.lam / scale ** 2)

    x_factor = x_system_factor(Rm, rho)
    rts = Rm.T @ Sm
    use_lap = work.lam != 0.0 and L is not None and L.matrix.nnz > 0
    y_factor = _YSolver(L, work.lam, rho) if use_lap else None
    lap_csr = L.matrix if use_lap else None

    state = initial_state(m, n)
    objective_trace: list[float] = []
    residual_trace: list[tuple[float, float]] = []
    converged = False

    for it in range(config.max_iter):
        prev_y = state.Y
        prev_z = state.Z
        state.X = x_update(state, Sm, Rm, work, factor=x_factor, rts=rts)
        state.Y = y_update(state, L, work, factor=y_factor)
        state.Z = z_update(state, work)
        state.Lam, state.V = dual_update(state, work)
        state.iter = it + 1

        prev = SolverState(X=state.X, Y=prev_y, Z=prev_z, V=state.V, Lam=state.Lam)
        primal, dual = residuals(state, prev, work)
        state.primal_residual, state.dual_residual = primal, dual
        residual_trace.append((primal, dual))
        objective_trace.append(scale ** 2 * _objective_tracked(
            Sm, Rm, state.Z, lap_csr, work.mu, work.lam))

        if not state.is_finite():
            raise NumericalError(f"non-finite iterate at iteration {it + 1}")

        eps_pri, eps_dual = stopping_thresholds(state, work)
        if primal <= eps_pri and dual <= eps_dual:
            converged = True
            break

    norms = group_row_norms(state.Z)
    abundances = AbundanceMatrix(data=state.Z, geometry=geometry)
    return SolveReport(
        abundances=abundances,
        iterations=state.iter,
        converged=converged,
        objective_trace=objective_trace,
        residual_trace=residual_trace,
        active_rows=[int(i) for i in np.nonzero(norms > 1e-8)[0]],
    )


def fcls(S, R, config: SolverConfig,
         geometry: ImageGeometry | None = None) -> SolveReport:
    """Fully constrained least squares: the mu = lam = 0, empty-graph case."""
    cfg = replace(config, mu=0.0, lam=0.0)
    return glup_lap(S, R, None, cfg, geometry=geometry)
