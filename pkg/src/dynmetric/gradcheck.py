"""Central finite-difference check of loss gradients w.r.t. raw embeddings.

The mined mask is computed once at the unperturbed point and held fixed.
Loss values for the differences are evaluated in ``np.longdouble`` by
default: in float64 the cancellation noise of ``L(x+h) - L(x-h)`` is about
``eps * |L| / h``, which swamps small gradient coordinates at h = 1e-6.
The analytic gradient under test is always the float64 one.
Coordinates whose +/-h perturbation would change the mined mask, or flip any
hinge in the loss, are skipped and counted rather than compared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dynmetric.core import BatchLabels, MiningThresholds, build_labels
from dynmetric.losses import STAR_LOSSES, LossOutput
from dynmetric.mining import PairMask, select_pairs
from dynmetric.similarity import backprop_similarity, cosine_matrix, normalize

DEFAULT_H = 1e-6


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_coordinate: tuple[int, int] | None
    kink_skipped_count: int
    checked_count: int

    def __str__(self):
        return (
            f"max_relative_error={self.max_relative_error:.3e} "
            f"worst_coordinate={self.worst_coordinate} "
            f"checked={self.checked_count} kink_skipped={self.kink_skipped_count}"
        )


def _similarity(x):
    return cosine_matrix(normalize(x))


def check_gradient(
    loss_fn,
    x,
    labels: BatchLabels,
    params,
    mask: PairMask | str | None = None,
    schedule=None,
    thresholds: MiningThresholds | None = None,
    h: float = DEFAULT_H,
    oracle_dtype=np.longdouble,
    **loss_kwargs,
) -> GradCheckReport:
    """Compare ``backprop_similarity(loss_fn(...).grad_s)`` against central differences.

    ``mask`` is a :class:`PairMask`, ``"all-pairs"``, ``"mined"``, or None
    (mined for re-weighted losses, all pairs otherwise).
    """
    if not 1e-8 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-8, 1e-3], got {h}")
    x = np.array(x, dtype=np.float64)
    n, d = x.shape
    if n > 16:
        raise ValueError(f"gradient check is meant for small batches (n <= 16), got {n}")
    th = thresholds or MiningThresholds()

    if mask is None:
        mask = "mined" if loss_fn in STAR_LOSSES.values() else "all-pairs"
    mined = isinstance(mask, str) and mask == "mined"
    s0 = _similarity(x)
    if mined:
        frozen = select_pairs(s0, labels, th)
    elif isinstance(mask, str):
        if mask != "all-pairs":
            raise ValueError(f"unknown mask mode {mask!r}")
        frozen = PairMask.all_pairs(labels)
    else:
        frozen = mask

    def evaluate(s) -> LossOutput:
        return loss_fn(s, labels, params, frozen, schedule, th, **loss_kwargs)

    base = evaluate(s0)
    analytic = backprop_similarity(x, base.grad_s)

    xo = x.astype(oracle_dtype)
    worst, worst_at, skipped, checked = 0.0, None, 0, 0
    for i in range(n):
        for k in range(d):
            outs = []
            ends = []
            crossed = False
            for step in (h, -h):
                xp = xo.copy()
                xp[i, k] += step
                ends.append(xp[i, k])
                sp = _similarity(xp)
                if mined and select_pairs(sp, labels, th) != frozen:
                    crossed = True
                    break
                out = evaluate(sp)
                if not np.array_equal(out.active, base.active):
                    crossed = True
                    break
                outs.append(out.value)
            if crossed:
                skipped += 1
                continue
            numeric = float((outs[0] - outs[1]) / (ends[0] - ends[1]))
            a = analytic[i, k]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if worst_at is None or rel > worst:
                worst, worst_at = rel, (i, k)
    return GradCheckReport(worst, worst_at, skipped, checked)


def corrupted(loss_fn, factor: float = 2.0):
    """Wrap ``loss_fn`` so the largest-magnitude gradient entry is scaled by ``factor``.

    Used to confirm the checker catches a wrong gradient.
    """

    def wrapped(*args, **kwargs):
        out = loss_fn(*args, **kwargs)
        g = out.grad_s.copy()
        i, j = np.unravel_index(np.argmax(np.abs(g)), g.shape)
        g[i, j] *= factor
        g[j, i] = g[i, j]
        return LossOutput(out.value, g, out.per_anchor, out.degenerate, out.active)

    return wrapped


def random_batch(rng: np.random.Generator, n: int | None = None, d: int | None = None):
    """Random raw embeddings plus labels in which every class has at least two members."""
    n = int(rng.integers(4, 9)) if n is None else n
    d = int(rng.integers(2, 17)) if d is None else d
    n_classes = int(rng.integers(2, n // 2 + 1))
    ids = np.concatenate([np.arange(n_classes), np.arange(n_classes), rng.integers(0, n_classes, n - 2 * n_classes)])
    rng.shuffle(ids)
    x = rng.standard_normal((n, d))
    return x, build_labels(ids)
