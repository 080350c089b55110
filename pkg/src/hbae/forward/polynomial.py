"""Polynomial curve-fitting pair: fine order-``n`` model and its projected coarse twin."""

from __future__ import annotations

import numpy as np

from .base import ForwardModel

__all__ = ["poly_design_matrix", "coarse_projection", "projection_matrix", "LinearModel", "polynomial_pair"]


def poly_design_matrix(t, n: int) -> np.ndarray:
    """Columns ``t, t**2, ..., t**n`` (no constant column)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if n < 1 or t.ndim != 1 or t.size < 1:
        raise ValueError("need n >= 1 and a non-empty 1-D t")
    return t[:, None] ** np.arange(1, n + 1)[None, :]


def projection_matrix(n: int, p: int) -> np.ndarray:
    if not 1 <= p < n:
        raise ValueError(f"invalid coarsening: need 1 <= p < n, got p={p}, n={n}")
    return np.diag((np.arange(n) < p).astype(float))


def coarse_projection(F, p: int) -> np.ndarray:
    """``G = F P``: keep the first ``p`` columns of ``F`` and zero the rest."""
    F = np.asarray(F, dtype=float)
    return F @ projection_matrix(F.shape[1], p)


class LinearModel(ForwardModel):
    """``y = A k``."""

    def __init__(self, matrix):
        self.matrix = np.array(matrix, dtype=float)
        self.output_dim, self.input_dim = self.matrix.shape

    def _evaluate(self, k):
        return self.matrix @ k

    def _evaluate_many(self, K):
        return K @ self.matrix.T, [None] * K.shape[0]


def polynomial_pair(t, n: int, p: int):
    """Return ``(fine, coarse)`` linear models for design points ``t``."""
    F = poly_design_matrix(t, n)
    return LinearModel(F), LinearModel(coarse_projection(F, p))
