"""Results files (one JSON record per line) and the re-weighting curve table."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from dynmetric import __version__
from dynmetric.config import ExperimentConfig
from dynmetric.core import EpochSchedule
from dynmetric.losses import DynamicWeights

EPOCH_FIELDS = ("record", "epoch", "mean_loss", "selected_pos_frac", "selected_neg_frac", "recall_at")

# values chosen here rather than taken from the method description
PROVENANCE = {
    "tau_p": "0.9 (method default)",
    "tau_n": "0.1 (method default)",
    "tau_b": "0.1 (package default; no value given by the method)",
    "optimizer": "Adam lr=1e-3 beta1=0.9 beta2=0.999 epsilon=1e-8 (package default)",
    "bd_loss": "alpha=2 lam=0.5 beta=40 (method default)",
    "lifted_loss": "lam=1.0 (method default)",
    "triplet_loss": "lam=0.5 (method default)",
    "ms_loss": "alpha=2 lam=0.5 beta=50 (method default)",
    "contrastive_loss": "lam=0.5 (package default)",
}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=False, separators=(",", ":"))


class ResultsWriter:
    """Streams a header line, one line per epoch, and a summary line.

    Lines are flushed as written so a crashed run leaves a readable prefix.
    """

    def __init__(self, path, cfg: ExperimentConfig):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = self.path.open("w", encoding="utf-8", newline="\n")
        self._write({
            "record": "header",
            "version": __version__,
            "config": cfg.to_dict(),
            "provenance": PROVENANCE,
        })
        self.epochs = 0

    def _write(self, obj):
        self.fh.write(_dumps(obj) + "\n")
        self.fh.flush()

    def epoch(self, rec):
        self._write({"record": "epoch", **rec.to_dict()})
        self.epochs += 1

    def close(self, status: str = "ok", final=None, message: str | None = None):
        self._write({
            "record": "summary",
            "status": status,
            "epochs_completed": self.epochs,
            "final": final.to_dict() if final is not None else None,
            "message": message,
        })
        self.fh.close()


def read_results(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def epoch_records(path) -> list[dict]:
    return [r for r in read_results(path) if r["record"] == "epoch"]


def emit_weight_curve(
    kind: str,
    tau: float,
    total_epochs: int,
    epochs,
    n_points: int,
) -> list[tuple[int, float, float]]:
    """``(epoch, s, weight)`` rows for the positive or negative re-weighting term.

    Positive curves span ``s`` in ``[0, tau]``; negative curves ``[tau, 1]``.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    if kind == "pos":
        grid = np.linspace(0.0, tau, n_points)
    elif kind == "neg":
        grid = np.linspace(tau, 1.0, n_points)
    else:
        raise ValueError(f"kind must be 'pos' or 'neg', got {kind!r}")
    rows = []
    for e in epochs:
        w = DynamicWeights(tau, tau, EpochSchedule(int(e), total_epochs).factor)
        values = w.pos(grid) if kind == "pos" else w.neg(grid)
        rows.extend((int(e), float(s), float(v)) for s, v in zip(grid, values))
    return rows


def write_curve_csv(rows, path, kind: str):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "epoch", "s", "weight"])
        for e, s, wt in rows:
            w.writerow([kind, e, repr(s), repr(wt)])
