"""Row normalization, cosine similarity, and the gradient path back to raw embeddings."""

from __future__ import annotations

import numpy as np

from dynmetric.core import as_float

_ZERO_NORM = 1e-12


def _row_norms(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms <= _ZERO_NORM)
    if bad.size:
        raise ValueError(f"zero-norm row {int(bad[0])}")
    return norms


def normalize(x) -> np.ndarray:
    """Scale every row of ``x`` to unit L2 norm."""
    x = np.atleast_2d(as_float(x))
    return x / _row_norms(x)[:, None]


def cosine_matrix(u) -> np.ndarray:
    """Pairwise dot products of unit rows. Rejects rows that are not unit norm."""
    u = np.atleast_2d(as_float(u))
    norms = np.linalg.norm(u, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        i = int(np.argmax(np.abs(norms - 1.0)))
        raise ValueError(f"row {i} is not unit-normalized (norm {norms[i]:.6g})")
    s = u @ u.T
    # matmul is not guaranteed to be bitwise symmetric
    return 0.5 * (s + s.T)


def backprop_similarity(x, grad_s) -> np.ndarray:
    """Gradient w.r.t. the raw (pre-normalization) rows ``x``.

    ``grad_s[i, j]`` is the loss derivative for entry (i, j) of the cosine
    matrix of ``normalize(x)``. The diagonal is ignored: self-similarity is
    constant under normalization.
    """
    x = np.atleast_2d(as_float(x))
    g = np.array(grad_s, dtype=np.float64)
    n = x.shape[0]
    if g.shape != (n, n):
        raise ValueError(f"grad_s has shape {g.shape}, expected {(n, n)}")
    norms = _row_norms(x)
    u = x / norms[:, None]
    np.fill_diagonal(g, 0.0)
    gu = (g + g.T) @ u
    radial = np.sum(gu * u, axis=1, keepdims=True)
    return (gu - radial * u) / norms[:, None]
