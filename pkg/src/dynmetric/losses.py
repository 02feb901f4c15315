"""Pair-based metric learning losses and their dynamically re-weighted forms.

Every loss takes a cosine similarity matrix and returns a :class:`LossOutput`
with the scalar value and the analytic gradient w.r.t. the similarity
matrix. Shared signature::

    loss(s, labels, params, mask=None, schedule=None, thresholds=None, ...)

``mask`` restricts which (anchor, partner) pairs enter the loss. Base losses
default to all pairs; star losses default to the mined mask from
:func:`dynmetric.mining.select_pairs`. Star losses need ``schedule`` (and use
``thresholds`` for the re-weighting terms) unless explicit ``weights`` are
passed.

Gradients are accumulated per ordered entry (anchor i reads ``s[i, j]``) and
then symmetrized, so ``grad_s[i, j] + grad_s[j, i]`` is the derivative w.r.t.
the unordered pair similarity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from dynmetric.core import (
    BatchLabels,
    EpochSchedule,
    LossParams,
    MiningThresholds,
    as_float,
    check_similarity,
)
from dynmetric.mining import PairMask, select_pairs


@dataclass
class LossOutput:
    value: float
    grad_s: np.ndarray
    per_anchor: np.ndarray
    degenerate: bool = False
    # hinge on/off states; lets the gradient checker detect kink crossings
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


@dataclass(frozen=True)
class DynamicWeights:
    """Epoch-scaled hardness terms ``factor * (tau_p - s)**2`` and ``factor * (s - tau_n)**2``.

    ``tau_p`` / ``tau_n`` may be arrays broadcastable against ``s``.
    """

    tau_p: float | np.ndarray
    tau_n: float | np.ndarray
    factor: float

    @classmethod
    def from_schedule(cls, th: MiningThresholds, sch: EpochSchedule) -> "DynamicWeights":
        return cls(th.tau_p, th.tau_n, sch.factor)

    @classmethod
    def zero(cls) -> "DynamicWeights":
        return cls(0.9, 0.1, 0.0)

    def pos(self, s):
        return self.factor * (self.tau_p - s) ** 2

    def neg(self, s):
        return self.factor * (s - self.tau_n) ** 2

    def dpos(self, s):
        return -2.0 * self.factor * (self.tau_p - s)

    def dneg(self, s):
        return 2.0 * self.factor * (s - self.tau_n)


def dynamic_weight_pos(s, th: MiningThresholds, sch: EpochSchedule):
    return DynamicWeights.from_schedule(th, sch).pos(s)


def dynamic_weight_neg(s, th: MiningThresholds, sch: EpochSchedule):
    return DynamicWeights.from_schedule(th, sch).neg(s)


def softplus(x):
    """``log(1 + e^x)`` without overflow."""
    x = as_float(x)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _masked_lse(x, mask, with_zero=False):
    """Row-wise log-sum-exp of ``x`` over ``mask`` and the matching softmax weights.

    With ``with_zero`` an implicit extra entry 0 joins every row, giving
    ``log(1 + sum(e^x))``. Empty rows yield ``-inf`` (or 0 with ``with_zero``).
    """
    xm = np.where(mask, x, -np.inf)
    top = xm.max(axis=1)
    if with_zero:
        top = np.maximum(top, 0.0)
    shift = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(xm - shift[:, None])
    total = e.sum(axis=1)
    if with_zero:
        total = total + np.exp(-shift)
    with np.errstate(divide="ignore"):
        lse = shift + np.log(total)
    weights = e / np.where(total > 0, total, 1.0)[:, None]
    return lse, weights


def _pair_masks(s, labels: BatchLabels, mask: PairMask | None, mined: bool, th):
    s = check_similarity(s, labels.n)
    if mask is None:
        mask = select_pairs(s, labels, th or MiningThresholds()) if mined else PairMask.all_pairs(labels)
    if mask.n != labels.n:
        raise ValueError(f"mask has size {mask.n}, labels have {labels.n}")
    return s, mask.pos_dir & labels.pos, mask.neg_dir & labels.neg


def _weights(weights, schedule, thresholds) -> DynamicWeights:
    if weights is not None:
        return weights
    if schedule is None:
        raise ValueError("dynamic losses need an EpochSchedule")
    return DynamicWeights.from_schedule(thresholds or MiningThresholds(), schedule)


def _degenerate(n: int) -> LossOutput:
    return LossOutput(0.0, np.zeros((n, n)), np.zeros(n), degenerate=True)


def _sym(g):
    return 0.5 * (g + g.T)


def _row_scale(mask, counts):
    return mask / np.maximum(counts, 1)[:, None]


# --------------------------------------------------------------------- contrastive


def contrastive_loss(s, labels, params: LossParams, mask=None, schedule=None, thresholds=None):
    """Mean over admitted positive pairs of ``-s``, plus hinged negatives ``max(0, s - lam)``.

    Works on unordered pairs; the normalizer is the number of admitted
    positive pairs.
    """
    s, P, N = _pair_masks(s, labels, mask, False, thresholds)
    n = labels.n
    up = np.triu(P | P.T, 1)
    un = np.triu(N | N.T, 1)
    m = int(up.sum())
    if m == 0:
        return _degenerate(n)
    hinge = s - params.lam
    act = un & (hinge > 0)
    terms = np.where(up, -s, 0.0) + np.where(act, hinge, 0.0)
    value = terms.sum() / m
    g = (np.where(up, -1.0, 0.0) + np.where(act, 1.0, 0.0)) / m
    per_anchor = 0.5 * (terms.sum(axis=1) + terms.sum(axis=0)) / m
    return LossOutput(value, _sym(g), per_anchor, active=hinge[un] > 0)


# ------------------------------------------------------------------- binomial deviance


def _bd_row_weights(P, N, normalization):
    if normalization == "per_anchor":
        return _row_scale(P, P.sum(axis=1)), _row_scale(N, N.sum(axis=1))
    if normalization == "global":
        return P / max(int(P.sum()), 1), N / max(int(N.sum()), 1)
    raise ValueError(f"bd_normalization must be 'per_anchor' or 'global', got {normalization!r}")


def bd_loss(
    s, labels, params: LossParams, mask=None, schedule=None, thresholds=None,
    bd_normalization="per_anchor",
):
    """Binomial deviance: softplus of ``alpha (lam - s)`` on positives and ``beta (s - lam)`` on negatives."""
    s, P, N = _pair_masks(s, labels, mask, False, thresholds)
    if not (P.any() or N.any()):
        return _degenerate(labels.n)
    wp, wn = _bd_row_weights(P, N, bd_normalization)
    xp = params.alpha * (params.lam - s)
    xn = params.beta * (s - params.lam)
    terms = wp * softplus(xp) + wn * softplus(xn)
    per_anchor = terms.sum(axis=1)
    g = -params.alpha * wp * expit(xp) + params.beta * wn * expit(xn)
    return LossOutput(per_anchor.sum(), _sym(g), per_anchor)


def bd_star(
    s, labels, params: LossParams, mask=None, schedule=None, thresholds=None,
    bd_normalization="per_anchor", weights: DynamicWeights | None = None,
):
    """Binomial deviance with the hardness terms added inside both exponents."""
    w = _weights(weights, schedule, thresholds)
    s, P, N = _pair_masks(s, labels, mask, True, thresholds)
    if not (P.any() or N.any()):
        return _degenerate(labels.n)
    wp, wn = _bd_row_weights(P, N, bd_normalization)
    xp = params.alpha * ((params.lam - s) + w.pos(s))
    xn = params.beta * ((s - params.lam) + w.neg(s))
    terms = wp * softplus(xp) + wn * softplus(xn)
    per_anchor = terms.sum(axis=1)
    g = (
        params.alpha * wp * expit(xp) * (-1.0 + w.dpos(s))
        + params.beta * wn * expit(xn) * (1.0 + w.dneg(s))
    )
    return LossOutput(per_anchor.sum(), _sym(g), per_anchor)


# ------------------------------------------------------------------------- triplet


def _triplet_grid(P, N):
    # valid[a, p, q]: p admitted positive and q admitted negative of anchor a
    return P[:, :, None] & N[:, None, :]


def triplet_loss(s, labels, params: LossParams, mask=None, schedule=None, thresholds=None):
    """Hinged triplet margin over every admitted (anchor, positive, negative) triple.

    Scaled by ``3 / (2 m)`` with ``m`` the number of admitted ordered
    anchor-positive pairs.
    """
    s, P, N = _pair_masks(s, labels, mask, False, thresholds)
    valid = _triplet_grid(P, N)
    m = int(P.sum())
    if m == 0 or not valid.any():
        return _degenerate(labels.n)
    c = 3.0 / (2.0 * m)
    t = (s[:, None, :] - s[:, :, None]) + params.lam
    act = valid & (t > 0)
    per_anchor = c * np.where(act, t, 0.0).sum(axis=(1, 2))
    g = c * (act.sum(axis=1) - act.sum(axis=2))
    return LossOutput(per_anchor.sum(), _sym(g), per_anchor, active=t[valid] > 0)


def triplet_star(
    s, labels, params: LossParams, mask=None, schedule=None, thresholds=None,
    triplet_star_form="per_triplet", weights: DynamicWeights | None = None,
):
    """Triplet loss with hardness terms on the positive and negative similarity.

    ``per_triplet`` hinges ``(-s_ap + w_pos) + (s_an + w_neg) + lam`` for each
    admitted triple. ``per_anchor`` first averages the positive and negative
    parts over each anchor's admitted pairs and hinges once per anchor.
    """
    w = _weights(weights, schedule, thresholds)
    s, P, N = _pair_masks(s, labels, mask, True, thresholds)
    m = int(P.sum())
    if triplet_star_form == "per_triplet":
        valid = _triplet_grid(P, N)
        if m == 0 or not valid.any():
            return _degenerate(labels.n)
        c = 3.0 / (2.0 * m)
        pos_part = -s + w.pos(s)
        neg_part = s + w.neg(s)
        t = (pos_part[:, :, None] + neg_part[:, None, :]) + params.lam
        act = valid & (t > 0)
        per_anchor = c * np.where(act, t, 0.0).sum(axis=(1, 2))
        g = c * (
            act.sum(axis=2) * (-1.0 + w.dpos(s)) + act.sum(axis=1) * (1.0 + w.dneg(s))
        )
        return LossOutput(per_anchor.sum(), _sym(g), per_anchor, active=t[valid] > 0)
    if triplet_star_form == "per_anchor":
        ok = P.any(axis=1) & N.any(axis=1)
        if m == 0 or not ok.any():
            return _degenerate(labels.n)
        c = 3.0 / (2.0 * m)
        wp = _row_scale(P, P.sum(axis=1))
        wn = _row_scale(N, N.sum(axis=1))
        inner = (wp * (-s + w.pos(s))).sum(axis=1) + (wn * (s + w.neg(s))).sum(axis=1) + params.lam
        act = ok & (inner > 0)
        per_anchor = c * np.where(act, inner, 0.0)
        g = c * act[:, None] * (wp * (-1.0 + w.dpos(s)) + wn * (1.0 + w.dneg(s)))
        return LossOutput(per_anchor.sum(), _sym(g), per_anchor, active=inner[ok] > 0)
    raise ValueError(
        f"triplet_star_form must be 'per_triplet' or 'per_anchor', got {triplet_star_form!r}"
    )


# ------------------------------------------------------------------ lifted structure


def _lifted(xp, xn, dxp, dxn, P, N):
    ok = P.any(axis=1) & N.any(axis=1)
    if not ok.any():
        return None
    lp, qp = _masked_lse(xp, P)
    ln, qn = _masked_lse(xn, N)
    inner = np.where(ok, lp + ln, 0.0)
    act = ok & (inner > 0)
    per_anchor = np.where(act, inner, 0.0)
    g = act[:, None] * (qp * dxp + qn * dxn)
    return LossOutput(per_anchor.sum(), _sym(g), per_anchor, active=inner[ok] > 0)


def lifted_loss(s, labels, params: LossParams, mask=None, schedule=None, thresholds=None):
    """Per anchor, ``max(0, logsumexp_pos(lam - s) + logsumexp_neg(s))``.

    Anchors without an admitted positive or negative contribute nothing.
    """
    s, P, N = _pair_masks(s, labels, mask, False, thresholds)
    out = _lifted(params.lam - s, s, -1.0, 1.0, P, N)
    return out if out is not None else _degenerate(labels.n)


def lifted_star(
    s, labels, params: LossParams, mask=None, schedule=None, thresholds=None,
    weights: DynamicWeights | None = None,
):
    w = _weights(weights, schedule, thresholds)
    s, P, N = _pair_masks(s, labels, mask, True, thresholds)
    out = _lifted(
        (params.lam - s) + w.pos(s),
        s + w.neg(s),
        -1.0 + w.dpos(s),
        1.0 + w.dneg(s),
        P,
        N,
    )
    return out if out is not None else _degenerate(labels.n)


# ---------------------------------------------------------------- multi-similarity


def _ms(xp, xn, dxp, dxn, P, N, alpha, beta):
    contributing = P.any(axis=1) | N.any(axis=1)
    n_anchors = int(contributing.sum())
    if n_anchors == 0:
        return None
    lp, qp = _masked_lse(xp, P, with_zero=True)
    ln, qn = _masked_lse(xn, N, with_zero=True)
    per_anchor = (lp / alpha + ln / beta) / n_anchors
    g = (qp * dxp / alpha + qn * dxn / beta) / n_anchors
    return LossOutput(per_anchor.sum(), _sym(g), per_anchor)


def ms_loss(s, labels, params: LossParams, mask=None, schedule=None, thresholds=None):
    """Multi-similarity loss, averaged over anchors that have any admitted pair."""
    s, P, N = _pair_masks(s, labels, mask, False, thresholds)
    a, b = params.alpha, params.beta
    out = _ms(-a * (s - params.lam), b * (s - params.lam), -a, b, P, N, a, b)
    return out if out is not None else _degenerate(labels.n)


def ms_star(
    s, labels, params: LossParams, mask=None, schedule=None, thresholds=None,
    ms_star_scale_weights=False, weights: DynamicWeights | None = None,
):
    """Multi-similarity with hardness terms added to each exponent.

    By default the terms enter unscaled next to ``-alpha (s - lam)`` and
    ``beta (s - lam)``; ``ms_star_scale_weights`` multiplies them by
    ``alpha`` / ``beta`` instead.
    """
    w = _weights(weights, schedule, thresholds)
    s, P, N = _pair_masks(s, labels, mask, True, thresholds)
    a, b = params.alpha, params.beta
    kp, kn = (a, b) if ms_star_scale_weights else (1.0, 1.0)
    out = _ms(
        -a * (s - params.lam) + kp * w.pos(s),
        b * (s - params.lam) + kn * w.neg(s),
        -a + kp * w.dpos(s),
        b + kn * w.dneg(s),
        P,
        N,
        a,
        b,
    )
    return out if out is not None else _degenerate(labels.n)


BASE_LOSSES = {
    "contrastive": contrastive_loss,
    "bd": bd_loss,
    "triplet": triplet_loss,
    "lifted": lifted_loss,
    "ms": ms_loss,
}

STAR_LOSSES = {
    "bd": bd_star,
    "triplet": triplet_star,
    "lifted": lifted_star,
    "ms": ms_star,
}

VARIANTS = ("base", "thresholded", "weighted", "star")
VARIANT_ALIASES = {"+T": "thresholded", "T": "thresholded", "+W": "weighted", "W": "weighted", "*": "star"}


def resolve_variant(variant: str) -> str:
    v = VARIANT_ALIASES.get(variant, variant)
    if v not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")
    return v


def loss_for(name: str, variant: str):
    """Return ``(loss_fn, mined)`` for a loss family and ablation variant.

    ``thresholded`` pairs the base loss with the mined mask, ``weighted`` the
    re-weighted loss with all pairs, ``star`` both.
    """
    if name not in BASE_LOSSES:
        raise ValueError(f"unknown loss {name!r}; expected one of {', '.join(BASE_LOSSES)}")
    variant = resolve_variant(variant)
    weighted = variant in ("weighted", "star")
    if weighted and name not in STAR_LOSSES:
        raise ValueError(f"loss {name!r} has no re-weighted form; use base or thresholded")
    fn = STAR_LOSSES[name] if weighted else BASE_LOSSES[name]
    return fn, variant in ("thresholded", "star")
