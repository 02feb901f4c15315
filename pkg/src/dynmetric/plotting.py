"""Figures written next to the delimited outputs. Headless (Agg) backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def _recall_series(records, k):
    pts = [(r["epoch"], r["recall_at"].get(str(k))) for r in records]
    return [e for e, v in pts if v is not None], [v for _, v in pts if v is not None]


def plot_training(records: list[dict], path, title: str = ""):
    """Mean loss, Recall@K and selected-pair fractions per epoch."""
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_rec, ax_frac) = plt.subplots(1, 3, figsize=(11, 3.4))
        epochs = [r["epoch"] for r in records]
        ax_loss.plot(epochs, [r["mean_loss"] for r in records], color="k")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("mean loss")
        ks = list(records[0]["recall_at"]) if records else []
        for k in ks:
            ax_rec.plot(*_recall_series(records, k), marker=".", label=f"R@{k}")
        ax_rec.set_xlabel("epoch")
        ax_rec.set_ylabel("recall")
        ax_rec.set_ylim(0, 1.02)
        if ks:
            ax_rec.legend(frameon=False)
        ax_frac.plot(epochs, [r["selected_pos_frac"] for r in records], label="positive")
        ax_frac.plot(epochs, [r["selected_neg_frac"] for r in records], label="negative")
        ax_frac.set_xlabel("epoch")
        ax_frac.set_ylabel("selected fraction")
        ax_frac.set_ylim(0, 1.02)
        ax_frac.legend(frameon=False)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_weight_curves(rows, path, kind: str):
    """One curve per epoch of the re-weighting term against similarity."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for epoch in sorted({e for e, _, _ in rows}):
            pts = [(s, w) for e, s, w in rows if e == epoch]
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=f"epoch {epoch}")
        ax.set_xlabel("similarity s")
        ax.set_ylabel("positive weight" if kind == "pos" else "negative weight")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_ablation(arms: dict[str, list[dict]], path, k: int = 1):
    """Recall@k per epoch for every ablation arm on one axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, records in arms.items():
            ax.plot(*_recall_series(records, k), marker=".", label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel(f"Recall@{k}")
        ax.legend(frameon=False)
        return _save(fig, path)
