"""Restarted GMRES over the block-partitioned dense system.

Right preconditioning by the matrix diagonal keeps the iterated residual
the true residual; rows are optionally equilibrated to unit infinity norm
first, which is what makes mixed-permittivity systems (neutrality and
dielectric rows carry factors of epsilon ~ 1e-11) converge to a solution
that actually satisfies those rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assembly import SystemMatrix, RowBlock

__all__ = ["SolverConfig", "Solution", "SolverError", "solve", "residual"]

logger = logging.getLogger(__name__)

DIAG_FLOOR = 1e-30


class SolverError(RuntimeError):
    """Non-convergence; carries the best residual reached."""

    def __init__(self, message: str, best_residual: float, iterations: int):
        super().__init__(message)
        self.best_residual = best_residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    restart: int = 100
    rel_tol: float = 1e-8
    max_iters: int = 2000
    row_equilibrate: bool = True
    verbose: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if not (0.0 < self.rel_tol < 1.0):
            raise ValueError("rel_tol must lie in (0, 1)")


@dataclass
class Solution:
    u: np.ndarray
    V: np.ndarray
    iterations: int
    residual: float
    diagnostics: dict = field(default_factory=dict)


def _as_matrix(matrix) -> SystemMatrix:
    if isinstance(matrix, SystemMatrix):
        return matrix
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return SystemMatrix(
        n=a.shape[0], n_floating=0, blocks=[RowBlock(0, a.shape[0], a.copy())]
    )


def residual(matrix, x, rhs) -> float:
    """Euclidean relative residual ||rhs - A x|| / ||rhs||."""
    m = _as_matrix(matrix)
    x = np.asarray(x, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if x.shape != (m.size,) or rhs.shape != (m.size,):
        raise ValueError(
            f"dimension mismatch: matrix {m.size}, x {x.shape}, rhs {rhs.shape}"
        )
    norm_b = np.linalg.norm(rhs)
    if norm_b == 0.0:
        return float(np.linalg.norm(m.matvec(x)))
    return float(np.linalg.norm(rhs - m.matvec(x)) / norm_b)


def solve(matrix, rhs, config: SolverConfig | None = None) -> Solution:
    """GMRES(restart) with diagonal right preconditioning.

    Raises SolverError when max_iters is exhausted before the relative
    residual reaches rel_tol.
    """
    cfg = config or SolverConfig()
    m = _as_matrix(matrix)
    b = np.asarray(rhs, dtype=float)
    if b.shape != (m.size,):
        raise ValueError(f"rhs of length {b.shape} against size {m.size}")

    if cfg.row_equilibrate:
        row_scale = np.empty(m.size)
        for blk in m.blocks:
            norms = np.max(np.abs(blk.data), axis=1)
            row_scale[blk.start:blk.stop] = np.where(norms > 0.0, norms, 1.0)
        left = 1.0 / row_scale
    else:
        left = np.ones(m.size)

    diag = m.diagonal() * left
    right = np.where(np.abs(diag) < DIAG_FLOOR, 1.0, diag)

    b_s = left * b
    norm_bs = np.linalg.norm(b_s)
    norm_b = np.linalg.norm(b)
    if norm_b == 0.0:
        return _finish(m, np.zeros(m.size), 0, 0.0)

    def op(z):
        # scaled operator: L A R^-1
        return left * m.matvec(z / right, workers=cfg.workers)

    x_s = np.zeros(m.size)  # solution of the scaled/preconditioned system
    total_iters = 0
    best_true = np.inf
    best_x = np.zeros(m.size)

    while total_iters < cfg.max_iters:
        r = b_s - op(x_s)
        beta = np.linalg.norm(r)
        if beta / norm_bs <= cfg.rel_tol:
            true_res = residual(m, x_s / right, b)
            if true_res <= cfg.rel_tol:
                return _finish(m, x_s / right, total_iters, true_res)
        x_s, inner, converged = _gmres_cycle(
            op, b_s, x_s, r, beta, cfg, norm_bs, total_iters
        )
        total_iters += inner
        true_res = residual(m, x_s / right, b)
        if true_res < best_true:
            best_true = true_res
            best_x = x_s.copy()
        if cfg.verbose:
            logger.info(
                "gmres cycle done: iters=%d rel_residual=%.3e",
                total_iters, true_res,
            )
        if converged and true_res <= cfg.rel_tol:
            return _finish(m, x_s / right, total_iters, true_res)

    raise SolverError(
        f"GMRES did not reach {cfg.rel_tol:g} within {cfg.max_iters} "
        f"iterations (best residual {best_true:.3e})",
        best_residual=float(best_true),
        iterations=total_iters,
    )


def _gmres_cycle(op, b_s, x0, r0, beta, cfg, norm_bs, iters_done):
    """One restart cycle.  Returns (x, inner_iterations, converged_flag)."""
    size = len(b_s)
    m_dim = min(cfg.restart, cfg.max_iters - iters_done)
    V = np.empty((m_dim + 1, size))
    H = np.zeros((m_dim + 1, m_dim))
    cs = np.zeros(m_dim)
    sn = np.zeros(m_dim)
    g = np.zeros(m_dim + 1)
    g[0] = beta
    V[0] = r0 / beta

    tol_abs = cfg.rel_tol * norm_bs
    j_used = 0
    converged = False
    for j in range(m_dim):
        w = op(V[j])
        norm_before = np.linalg.norm(w)
        for i in range(j + 1):
            H[i, j] = V[i] @ w
            w -= H[i, j] * V[i]
        norm_after = np.linalg.norm(w)
        if norm_after < norm_before / np.sqrt(2.0):
            # lost orthogonality: one reorthogonalization pass
            for i in range(j + 1):
                corr = V[i] @ w
                H[i, j] += corr
                w -= corr * V[i]
            norm_after = np.linalg.norm(w)
        H[j + 1, j] = norm_after

        # apply stored Givens rotations to the new column
        for i in range(j):
            t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
            H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
            H[i, j] = t
        denom = np.hypot(H[j, j], H[j + 1, j])
        if denom == 0.0:
            # exactly degenerate column: drop it and stop the cycle
            j_used = j
            converged = True
            break
        cs[j] = H[j, j] / denom
        sn[j] = H[j + 1, j] / denom
        H[j, j] = denom
        H[j + 1, j] = 0.0
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]
        j_used = j + 1

        if cfg.verbose:
            logger.info(
                "gmres iter %d: residual estimate %.3e",
                iters_done + j + 1, abs(g[j + 1]) / norm_bs,
            )
        if norm_after == 0.0:
            converged = True  # lucky breakdown: exact solution in the space
            break
        V[j + 1] = w / norm_after
        if abs(g[j + 1]) <= tol_abs:
            converged = True
            break

    if j_used == 0:
        return x0, 0, True
    y = np.linalg.solve(
        np.triu(H[:j_used, :j_used]), g[:j_used]
    )
    x = x0 + V[:j_used].T @ y
    return x, j_used, converged


def _finish(m: SystemMatrix, x: np.ndarray, iters: int, res: float) -> Solution:
    return Solution(
        u=x[: m.n].copy(),
        V=x[m.n:].copy(),
        iterations=iters,
        residual=float(res),
    )
