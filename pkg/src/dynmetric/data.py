"""Feature datasets: synthetic clusters, CSV I/O, train/eval splits, P x K batches.

CSV layout: UTF-8, header ``label,f0,f1,...,f{d-1}``, one sample per line,
integer label then decimal features.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TRAIN, EVAL = "train", "eval"


@dataclass(frozen=True)
class FeatureDataset:
    features: np.ndarray
    class_ids: np.ndarray
    split: np.ndarray = field(default=None)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        ids = np.asarray(self.class_ids, dtype=np.int64)
        if feats.ndim != 2 or len(feats) != len(ids):
            raise ValueError("features must be (n, d) with one class id per row")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain NaN or Inf")
        split = np.full(len(ids), TRAIN) if self.split is None else np.asarray(self.split)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(self, "split", split)

    def __len__(self):
        return len(self.class_ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, tag: str) -> "FeatureDataset":
        keep = self.split == tag
        return FeatureDataset(self.features[keep], self.class_ids[keep], self.split[keep])

    def train(self) -> "FeatureDataset":
        return self.subset(TRAIN)

    def eval(self) -> "FeatureDataset":
        return self.subset(EVAL)


def generate_synthetic(
    num_classes: int,
    samples_per_class: int,
    d_in: int,
    cluster_spread: float,
    seed: int,
) -> FeatureDataset:
    """Gaussian blobs around class centers drawn uniformly on the unit sphere."""
    if num_classes < 2 or samples_per_class < 2:
        raise ValueError("need num_classes >= 2 and samples_per_class >= 2")
    if d_in < 1 or cluster_spread < 0:
        raise ValueError("need d_in >= 1 and cluster_spread >= 0")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, d_in))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    ids = np.repeat(np.arange(num_classes), samples_per_class)
    noise = cluster_spread * rng.standard_normal((len(ids), d_in))
    return FeatureDataset(centers[ids] + noise, ids)


def load_csv(path) -> FeatureDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValueError(f"{path}: no header")
        if header[0] != "label" or len(header) < 2:
            raise ValueError(f"{path}: header must be 'label,f0,f1,...'")
        width = len(header)
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ValueError(
                    f"{path}: row {lineno} has {len(row) - 1} features, header declares {width - 1}"
                )
            try:
                label = int(row[0])
            except ValueError:
                raise ValueError(f"{path}: row {lineno} label {row[0]!r} is not an integer") from None
            if label < 0:
                raise ValueError(f"{path}: row {lineno} label {label} is negative")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise ValueError(f"{path}: row {lineno} has a non-numeric feature") from None
            labels.append(label)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return FeatureDataset(np.array(rows), np.array(labels))


def save_csv(dataset: FeatureDataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + [f"f{i}" for i in range(dataset.dim)])
        for label, row in zip(dataset.class_ids, dataset.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def split(dataset: FeatureDataset, mode: str, fraction: float, seed: int) -> FeatureDataset:
    """Tag every sample train or eval.

    ``shared-classes`` keeps ``round(fraction * n_c)`` samples of each class
    for training (at least one); ``disjoint-classes`` sends whole classes to
    one side.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    ids = dataset.class_ids
    classes = np.unique(ids)
    tags = np.full(len(ids), EVAL, dtype=object)
    if mode == "shared-classes":
        for c in classes:
            members = rng.permutation(np.flatnonzero(ids == c))
            n_train = min(max(int(round(fraction * len(members))), 1), len(members))
            tags[members[:n_train]] = TRAIN
    elif mode == "disjoint-classes":
        chosen = rng.permutation(classes)[: int(round(fraction * len(classes)))]
        tags[np.isin(ids, chosen)] = TRAIN
    else:
        raise ValueError(f"split mode must be 'shared-classes' or 'disjoint-classes', got {mode!r}")
    tags = tags.astype(str)
    if not (tags == TRAIN).any() or not (tags == EVAL).any():
        raise ValueError(f"{mode} split with fraction {fraction} leaves one side empty")
    return FeatureDataset(dataset.features, ids, tags)


@dataclass(frozen=True)
class SamplerConfig:
    classes_per_batch: int = 25
    images_per_class: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.classes_per_batch < 2 or self.images_per_class < 2:
            raise ValueError("need classes_per_batch >= 2 and images_per_class >= 2")

    @property
    def batch_size(self) -> int:
        return self.classes_per_batch * self.images_per_class


class PKSampler:
    """Class-balanced batches: P distinct classes, K distinct samples from each.

    Classes may repeat across batches. Holds its own seeded generator, so the
    batch sequence depends only on the seed and how many batches were drawn.
    """

    def __init__(self, dataset: FeatureDataset, cfg: SamplerConfig):
        self.dataset = dataset
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        by_class = {int(c): np.flatnonzero(dataset.class_ids == c) for c in np.unique(dataset.class_ids)}
        self.eligible = sorted(c for c, idx in by_class.items() if len(idx) >= cfg.images_per_class)
        if len(self.eligible) < cfg.classes_per_batch:
            raise ValueError(
                f"sampler needs {cfg.classes_per_batch} classes with >= {cfg.images_per_class} "
                f"samples each; dataset has {len(self.eligible)}"
            )
        self.by_class = by_class
        self.drawn = 0

    def sample_indices(self) -> np.ndarray:
        classes = self.rng.choice(self.eligible, size=self.cfg.classes_per_batch, replace=False)
        picks = [
            self.rng.choice(self.by_class[int(c)], size=self.cfg.images_per_class, replace=False)
            for c in classes
        ]
        self.drawn += 1
        return np.concatenate(picks)

    def sample_batch(self) -> tuple[np.ndarray, np.ndarray]:
        idx = self.sample_indices()
        return self.dataset.features[idx], self.dataset.class_ids[idx]


def sample_batch(sampler: PKSampler) -> tuple[np.ndarray, np.ndarray]:
    return sampler.sample_batch()
