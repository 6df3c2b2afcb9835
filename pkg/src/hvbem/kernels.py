"""Pointwise Laplace kernels: single layer, adjoint double layer, field.

Permittivity never appears here; it enters only as a row scaling during
assembly, which keeps the kernels universal across materials.
"""

from __future__ import annotations

import numpy as np

__all__ = ["SingularEvaluation", "sl_kernel", "adl_kernel", "efield_kernel"]

FOUR_PI = 4.0 * np.pi
MIN_SEPARATION = 1e-14


class SingularEvaluation(ValueError):
    """Kernel evaluated at (numerically) coincident points."""


def _separation(x, y) -> tuple[np.ndarray, float]:
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = float(np.linalg.norm(d))
    if r < MIN_SEPARATION:
        raise SingularEvaluation(f"kernel evaluated at |x-y| = {r:.3e}")
    return d, r


def sl_kernel(x, y) -> float:
    """Single-layer kernel 1 / (4 pi |x - y|)."""
    _, r = _separation(x, y)
    return 1.0 / (FOUR_PI * r)


def adl_kernel(x, n_x, y) -> float:
    """Adjoint-double-layer kernel (x - y) . n(x) / (4 pi |x - y|^3)."""
    d, r = _separation(x, y)
    return float(d @ np.asarray(n_x, dtype=float)) / (FOUR_PI * r ** 3)


def efield_kernel(x, y) -> np.ndarray:
    """Field kernel (x - y) / (4 pi |x - y|^3)."""
    d, r = _separation(x, y)
    return d / (FOUR_PI * r ** 3)
