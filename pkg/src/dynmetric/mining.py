"""Threshold-based pair selection.

Positives are kept while ``s < tau_p``. Negatives are kept when ``s > tau_n``
and, relative to anchor i, ``s > min_k s[i, k] - tau_b`` where k runs over
the positives of i (the flexible margin). The flexible margin is anchor
relative, so selection is tracked per ordered (anchor, partner) pair in
``pos_dir`` / ``neg_dir``; the symmetric ``selected_*`` views are the union
over both anchors and are what gets reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dynmetric.core import BatchLabels, MiningThresholds, check_similarity


@dataclass(frozen=True)
class PairMask:
    pos_dir: np.ndarray
    neg_dir: np.ndarray

    @property
    def selected_pos(self) -> np.ndarray:
        return self.pos_dir | self.pos_dir.T

    @property
    def selected_neg(self) -> np.ndarray:
        return self.neg_dir | self.neg_dir.T

    @property
    def n(self) -> int:
        return self.pos_dir.shape[0]

    @classmethod
    def all_pairs(cls, labels: BatchLabels) -> "PairMask":
        return cls(labels.pos.copy(), labels.neg.copy())

    @classmethod
    def empty(cls, n: int) -> "PairMask":
        z = np.zeros((n, n), dtype=bool)
        return cls(z, z.copy())

    def __eq__(self, other):
        if not isinstance(other, PairMask):
            return NotImplemented
        return np.array_equal(self.pos_dir, other.pos_dir) and np.array_equal(
            self.neg_dir, other.neg_dir
        )

    __hash__ = None


def select_pairs(
    s,
    labels: BatchLabels,
    th: MiningThresholds = MiningThresholds(),
    min_over: str = "all",
) -> PairMask:
    """Apply the three thresholds to a batch.

    ``min_over`` picks which positives define the flexible margin: ``"all"``
    positives of the anchor, or only the ``"admitted"`` ones (s < tau_p).
    Anchors with no (such) positive skip the flexible-margin test.
    """
    s = check_similarity(s, labels.n)
    if min_over not in ("all", "admitted"):
        raise ValueError(f"min_over must be 'all' or 'admitted', got {min_over!r}")

    pos_dir = labels.pos & (s < th.tau_p)

    ref = labels.pos if min_over == "all" else pos_dir
    hardest_pos = np.where(ref, s, np.inf).min(axis=1)
    # inf - tau_b stays inf: no positives means the margin is vacuous
    floor = np.where(np.isfinite(hardest_pos), hardest_pos - th.tau_b, -np.inf)
    neg_dir = labels.neg & (s > th.tau_n) & (s > floor[:, None])
    return PairMask(pos_dir, neg_dir)


@dataclass(frozen=True)
class MaskStats:
    pos_per_anchor: np.ndarray
    neg_per_anchor: np.ndarray
    total_pos: int
    total_neg: int


def mask_stats(mask: PairMask) -> MaskStats:
    """Selected-pair counts per anchor and in total (unordered pairs)."""
    sp, sn = mask.selected_pos, mask.selected_neg
    return MaskStats(
        pos_per_anchor=sp.sum(axis=1),
        neg_per_anchor=sn.sum(axis=1),
        total_pos=int(np.triu(sp, 1).sum()),
        total_neg=int(np.triu(sn, 1).sum()),
    )
