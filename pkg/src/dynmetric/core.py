"""Shared batch types: labels, loss parameters, epoch schedule, mining thresholds.

All numeric work in the package is float64; the only exception is the
gradient checker, which re-evaluates losses in ``np.longdouble`` and relies on
:func:`as_float` passing that dtype through. Similarity matrices are plain
``(n, n)`` float arrays; :func:`check_similarity` validates one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BatchLabels:
    """Class ids of a batch plus the derived pair indicators.

    ``pos[i, j]`` is True iff samples i and j share a class and i != j;
    ``neg[i, j]`` is True iff their classes differ. ``P`` and ``N`` count
    unordered pairs.
    """

    class_ids: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    @property
    def n(self) -> int:
        return len(self.class_ids)

    @property
    def P(self) -> int:
        return int(self.pos.sum()) // 2

    @property
    def N(self) -> int:
        return int(self.neg.sum()) // 2

    def positives(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.pos[i])

    def negatives(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.neg[i])


def build_labels(class_ids) -> BatchLabels:
    ids = np.asarray(class_ids, dtype=np.int64).ravel()
    if ids.size == 0:
        raise ValueError("empty batch")
    same = ids[:, None] == ids[None, :]
    pos = same.copy()
    np.fill_diagonal(pos, False)
    neg = ~same
    return BatchLabels(_frozen(ids.copy()), _frozen(pos), _frozen(neg))


@dataclass(frozen=True)
class LossParams:
    """Margin ``lam`` and branch scales ``alpha`` (positive) / ``beta`` (negative)."""

    lam: float = 0.5
    alpha: float = 2.0
    beta: float = 40.0

    def __post_init__(self):
        if not self.alpha > 0 or not self.beta > 0:
            raise ValueError(f"alpha and beta must be > 0, got {self.alpha}, {self.beta}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must lie in [0, 1], got {self.lam}")


@dataclass(frozen=True)
class EpochSchedule:
    """Current epoch (1-based) and total epochs."""

    current: int
    total: int

    def __post_init__(self):
        if self.total < 1 or not 1 <= self.current <= self.total:
            raise ValueError(
                f"need 1 <= current <= total, got current={self.current}, total={self.total}"
            )

    @property
    def factor(self) -> float:
        """The ``2 E_c / E_t`` multiplier of the re-weighting terms."""
        return 2.0 * self.current / self.total


@dataclass(frozen=True)
class MiningThresholds:
    tau_p: float = 0.9
    tau_n: float = 0.1
    tau_b: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.tau_n < self.tau_p <= 1.0:
            raise ValueError(
                f"need 0 <= tau_n < tau_p <= 1, got tau_n={self.tau_n}, tau_p={self.tau_p}"
            )
        if self.tau_b < 0:
            raise ValueError(f"tau_b must be >= 0, got {self.tau_b}")


def as_float(a) -> np.ndarray:
    """float64 array, except that wider float inputs (``np.longdouble``) are kept."""
    a = np.asarray(a)
    if a.dtype == np.longdouble:
        return a
    return a.astype(np.float64, copy=False)


def check_similarity(s, n: int | None = None) -> np.ndarray:
    """Return ``s`` as a float square matrix, checking symmetry and range."""
    s = as_float(s)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity matrix must be square, got shape {s.shape}")
    if n is not None and s.shape[0] != n:
        raise ValueError(f"similarity matrix has size {s.shape[0]}, labels have {n}")
    if not (np.abs(s - s.T) <= 1e-12).all():
        raise ValueError("similarity matrix is not symmetric")
    if (np.abs(s) > 1.0 + 1e-9).any():
        raise ValueError("similarity values outside [-1, 1]")
    return s
