"""Linear embedder, Adam, and the epoch loop that feeds the schedule into the loss."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dynmetric.config import ExperimentConfig
from dynmetric.core import EpochSchedule, LossParams, MiningThresholds, build_labels
from dynmetric.data import (
    FeatureDataset,
    PKSampler,
    SamplerConfig,
    generate_synthetic,
    load_csv,
    split,
)
from dynmetric.losses import loss_for
from dynmetric.mining import PairMask, mask_stats, select_pairs
from dynmetric.retrieval import recall_at_k
from dynmetric.similarity import backprop_similarity, cosine_matrix, normalize


class DivergenceError(ArithmeticError):
    """Non-finite loss or gradient. ``records`` holds the epochs completed so far."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = list(records or [])


@dataclass
class LinearEmbedder:
    weight: np.ndarray
    bias: np.ndarray | None = None

    @classmethod
    def init(cls, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        w = rng.standard_normal((d_out, d_in)) / math.sqrt(d_in)
        return cls(w, np.zeros(d_out) if bias else None)

    def params(self) -> dict[str, np.ndarray]:
        p = {"weight": self.weight}
        if self.bias is not None:
            p["bias"] = self.bias
        return p

    def project(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weight.shape[1]:
            raise ValueError(f"features have shape {x.shape}, model expects (n, {self.weight.shape[1]})")
        z = x @ self.weight.T
        if self.bias is not None:
            z = z + self.bias
        return z


def forward(model: LinearEmbedder, features) -> np.ndarray:
    """Unit-norm embeddings ``normalize(W x + b)``."""
    return normalize(model.project(features))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update. Returns new parameter arrays; inputs are not modified."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"diverged: non-finite gradient for {name}")
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params, m, v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {np.shape(p)}")
        m[name] = state.beta1 * state.m.get(name, np.zeros_like(g)) + (1 - state.beta1) * g
        v[name] = state.beta2 * state.v.get(name, np.zeros_like(g)) + (1 - state.beta2) * g * g
        m_hat = m[name] / bc1
        v_hat = v[name] / bc2
        with np.errstate(over="ignore", invalid="ignore"):
            new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        if not np.all(np.isfinite(new_params[name])):
            raise DivergenceError(f"diverged: non-finite value in {name} after update")
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.epsilon, t, m, v)
    return new_params, new_state


@dataclass
class TrainRecord:
    epoch: int
    mean_loss: float
    selected_pos_frac: float
    selected_neg_frac: float
    recall_at: dict[int, float | None]

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "mean_loss": self.mean_loss,
            "selected_pos_frac": self.selected_pos_frac,
            "selected_neg_frac": self.selected_neg_frac,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
        }


def evaluate(model: LinearEmbedder, dataset: FeatureDataset, ks) -> dict[int, float]:
    """Within-set Recall@K on ``dataset`` (each item queries all the others)."""
    emb = forward(model, dataset.features)
    res = recall_at_k(emb, dataset.class_ids, emb, dataset.class_ids, ks, self_match_excluded=True)
    return res.recall


def _seeds(seed: int):
    init_seq, sampler_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), int(sampler_seq.generate_state(1)[0])


def _loss_kwargs(cfg: ExperimentConfig, fn) -> dict:
    lc = cfg.loss
    opts = {
        "bd_normalization": lc.bd_normalization,
        "ms_star_scale_weights": lc.ms_star_scale_weights,
        "triplet_star_form": lc.triplet_star_form,
    }
    accepted = fn.__code__.co_varnames[: fn.__code__.co_argcount + fn.__code__.co_kwonlyargcount]
    return {k: v for k, v in opts.items() if k in accepted}


def train(cfg: ExperimentConfig, dataset: FeatureDataset, loss_fn=None, on_epoch=None) -> list[TrainRecord]:
    """Train a linear embedder on the train split; one record per epoch.

    ``loss_fn`` overrides the configured loss (same call signature);
    ``on_epoch`` is called with each record as soon as it is produced.
    """
    return fit(cfg, dataset, loss_fn, on_epoch)[1]


def fit(cfg: ExperimentConfig, dataset: FeatureDataset, loss_fn=None, on_epoch=None):
    """Like :func:`train` but returns ``(model, records)``."""
    fn, mined = loss_for(cfg.loss.name, cfg.loss.variant)
    if loss_fn is not None:
        fn = loss_fn
    kwargs = _loss_kwargs(cfg, fn) if loss_fn is None else {}
    params = LossParams(cfg.loss.lam, cfg.loss.alpha, cfg.loss.beta)
    th = MiningThresholds(cfg.thresholds.tau_p, cfg.thresholds.tau_n, cfg.thresholds.tau_b)

    train_set = dataset.train()
    eval_set = dataset.eval()
    init_rng, sampler_seed = _seeds(cfg.seed)
    model = LinearEmbedder.init(train_set.dim, cfg.model.embedding_dim, init_rng, cfg.model.bias)
    sampler = PKSampler(
        train_set,
        SamplerConfig(cfg.sampler.classes_per_batch, cfg.sampler.images_per_class, sampler_seed),
    )
    op = cfg.optimizer
    state = AdamState(op.lr, op.beta1, op.beta2, op.epsilon)
    batches = math.ceil(len(train_set) / sampler.cfg.batch_size)
    eval_ks = [k for k in cfg.eval.ks if k <= len(eval_set) - 1]
    total = cfg.schedule.epochs

    records: list[TrainRecord] = []
    for epoch in range(1, total + 1):
        schedule = EpochSchedule(epoch, total)
        losses = []
        pos_sel = pos_all = neg_sel = neg_all = 0
        for _ in range(batches):
            feats, ids = sampler.sample_batch()
            labels = build_labels(ids)
            z = model.project(feats)
            s = cosine_matrix(normalize(z))
            if mined:
                mask = select_pairs(s, labels, th, cfg.thresholds.min_over)
            else:
                mask = PairMask.all_pairs(labels)
            stats = mask_stats(mask)
            pos_sel += stats.total_pos
            neg_sel += stats.total_neg
            pos_all += labels.P
            neg_all += labels.N

            out = fn(s, labels, params, mask, schedule, th, **kwargs)
            if not math.isfinite(out.value):
                raise DivergenceError(f"diverged: non-finite loss at epoch {epoch}", records)
            losses.append(float(out.value))

            gz = backprop_similarity(z, out.grad_s)
            grads = {"weight": gz.T @ feats}
            if model.bias is not None:
                grads["bias"] = gz.sum(axis=0)
            try:
                new, state = adam_step(state, model.params(), grads)
            except DivergenceError as exc:
                raise DivergenceError(str(exc), records) from None
            model = LinearEmbedder(new["weight"], new.get("bias"))

        if epoch % cfg.eval.every == 0 or epoch == total:
            recall = evaluate(model, eval_set, eval_ks) if eval_ks else {}
            recall = {k: recall.get(k) for k in cfg.eval.ks}
        else:
            recall = {k: None for k in cfg.eval.ks}
        rec = TrainRecord(
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            selected_pos_frac=pos_sel / pos_all if pos_all else 0.0,
            selected_neg_frac=neg_sel / neg_all if neg_all else 0.0,
            recall_at=recall,
        )
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return model, records


def dataset_from_config(cfg: ExperimentConfig) -> FeatureDataset:
    dc = cfg.data
    if dc.source == "csv":
        ds = load_csv(dc.path)
    else:
        ds = generate_synthetic(dc.num_classes, dc.samples_per_class, dc.d_in, dc.spread, cfg.seed)
    return split(ds, dc.split_mode, dc.split_fraction, cfg.seed)
