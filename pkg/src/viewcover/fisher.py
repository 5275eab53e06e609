"""Exact information-gain oracles at desk scale.

Everything here works on the dense Gram matrix of the observation rows and
exists to validate the streaming metric accumulators against ground truth.
It is deliberately size-capped: the point of the accumulators is that the
dense route stops scaling.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .raster import WeightMatrix

MAX_ORACLE_PRIMITIVES = 500
MAX_ORACLE_ROWS = 20_000


class RankDeficientGramError(ValueError):
    """Gram matrix is not positive definite."""


def gram_matrix(w: WeightMatrix | np.ndarray) -> np.ndarray:
    """Dense Gram matrix W^T W of the observation rows."""
    dense = w.dense() if isinstance(w, WeightMatrix) else np.asarray(w, dtype=np.float64)
    if dense.shape[1] > MAX_ORACLE_PRIMITIVES or dense.shape[0] > MAX_ORACLE_ROWS:
        raise ValueError(
            f"oracle is capped at {MAX_ORACLE_ROWS}x{MAX_ORACLE_PRIMITIVES}, "
            f"got {dense.shape}"
        )
    return dense.T @ dense


def _cholesky(g: np.ndarray):
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("Gram matrix must be square")
    if not np.allclose(g, g.T, atol=1e-10 * max(1.0, np.abs(g).max())):
        raise ValueError("Gram matrix must be symmetric")
    try:
        return cho_factor(g, lower=True)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientGramError("Gram matrix is not positive definite") from exc


def log_det_gram(g: np.ndarray) -> float:
    """log |G| via Cholesky; raises RankDeficientGramError if G is not PD."""
    c, _ = _cholesky(g)
    return float(2.0 * np.sum(np.log(np.diag(c))))


def fig(w: np.ndarray, g: np.ndarray) -> float:
    """Information gain of one observation row: log(1 + w^T G^{-1} w).

    Equals log|G + w w^T| - log|G| by the rank-one determinant update, and
    is always >= 0.
    """
    w = np.asarray(w, dtype=np.float64)
    factor = _cholesky(g)
    return float(np.log1p(w @ cho_solve(factor, w)))


def rayleigh_extremes(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(argmin_{|w|=1} w^T G w, argmax_{|w|=1} w^T G^{-1} w).

    Both are the minimum-eigenvalue eigenvector of G (up to sign), and
    their quadratic forms are reciprocal.
    """
    _cholesky(g)  # PD check
    eigvals, eigvecs = np.linalg.eigh(np.asarray(g, dtype=np.float64))
    v = eigvecs[:, 0]
    return v, v.copy()


def cauchy_schwarz_gap(w: np.ndarray, g: np.ndarray) -> tuple[float, float, float]:
    """(w^T G^{-1} w, 1 / (w^T G w), gap).

    The gap is non-negative for unit w and zero exactly when w is an
    eigenvector of G.
    """
    w = np.asarray(w, dtype=np.float64)
    factor = _cholesky(g)
    lhs = float(w @ cho_solve(factor, w))
    rhs = float(1.0 / (w @ np.asarray(g) @ w))
    return lhs, rhs, lhs - rhs


def min_norm_one_hot(w: WeightMatrix | np.ndarray) -> tuple[int, float]:
    """Index and norm of the minimum-L2-norm column; ties take the lowest index.

    The one-hot vector at this column minimizes both ||W v||_2 and
    sum_i v_i ||W_{:,i}||_2 over the non-negative unit sphere.
    """
    if isinstance(w, WeightMatrix):
        col_norms = np.sqrt(w.column_sq_norms())
    else:
        dense = np.asarray(w, dtype=np.float64)
        if dense.min() < 0:
            raise ValueError("weight matrix must be non-negative")
        col_norms = np.linalg.norm(dense, axis=0)
    if col_norms.max() <= 0:
        raise ValueError("all columns are zero")
    i_star = int(np.argmin(col_norms))  # argmin takes the first minimum
    return i_star, float(col_norms[i_star])


def exact_fig_ranking(
    w_train: WeightMatrix | np.ndarray,
    candidates: Sequence[WeightMatrix],
    ridge: float = 1e-6,
) -> tuple[list[int], np.ndarray]:
    """Rank candidate cameras by mean per-row information gain, descending.

    `ridge * I` keeps the Gram invertible before the training rows reach
    full rank. Each candidate's score is the mean gain of its sampled
    pixel rows against the current Gram; ties keep the lower candidate
    index. Returns (ranking, scores-in-candidate-order).
    """
    if not candidates:
        raise ValueError("need at least one candidate")
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    g = gram_matrix(w_train) + ridge * np.eye(
        w_train.n_primitives if isinstance(w_train, WeightMatrix) else w_train.shape[1]
    )
    factor = _cholesky(g)

    scores = np.empty(len(candidates))
    for k, cand in enumerate(candidates):
        dense = cand.dense()
        if dense.shape[0] == 0:
            scores[k] = 0.0
            continue
        solved = cho_solve(factor, dense.T)
        scores[k] = float(np.mean(np.log1p(np.einsum("rp,pr->r", dense, solved))))
    ranking = sorted(range(len(candidates)), key=lambda k: (-scores[k], k))
    return ranking, scores


def sample_nonneg_unit(rng: np.random.Generator, p: int, n: int = 1) -> np.ndarray:
    """(n, p) samples from the non-negative unit sphere (Dirichlet + sqrt)."""
    return np.sqrt(rng.dirichlet(np.ones(p), size=n))
