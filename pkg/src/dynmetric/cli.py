"""Command line entry point: ``dynmetric {train,ablate,gradcheck,weight-curve,eval}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure
(divergence, failed gradient check).
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from dynmetric.config import LOSS_DEFAULTS, ConfigError, default_config, load
from dynmetric.core import EpochSchedule, LossParams, MiningThresholds
from dynmetric.data import load_csv
from dynmetric.gradcheck import DEFAULT_H, check_gradient, corrupted, random_batch
from dynmetric.losses import VARIANTS, loss_for
from dynmetric.model import DivergenceError, dataset_from_config, train
from dynmetric.plotting import plot_ablation, plot_training, plot_weight_curves
from dynmetric.report import ResultsWriter, emit_weight_curve, epoch_records, write_curve_csv
from dynmetric.retrieval import recall_at_k
from dynmetric.similarity import normalize

log = logging.getLogger("dynmetric")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
GRADCHECK_TOLERANCE = 1e-5
ARM_FILE = {"base": "base", "thresholded": "T", "weighted": "W", "star": "star"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", type=Path, help="YAML experiment config (defaults if omitted)")
    p.add_argument("--out", type=Path, help="output path")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--quiet", action="store_true", help="only print errors")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dynmetric", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one configuration, write per-epoch results")
    _common(p)
    p.add_argument("--no-plot", action="store_true", help="skip the PNG next to the results file")

    p = sub.add_parser("ablate", help="run base / +T / +W / star arms of the configured loss")
    _common(p)
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference check of one loss gradient")
    _common(p)
    p.add_argument("--loss", required=True)
    p.add_argument("--variant", default="star", help=f"one of {', '.join(VARIANTS)}")
    p.add_argument("--h", type=float, default=DEFAULT_H)
    p.add_argument("--n", type=int, default=8, help="batch size")
    p.add_argument("--d", type=int, default=16, help="embedding dimension")
    p.add_argument("--inject-fault", action="store_true", help="corrupt the analytic gradient on purpose")

    p = sub.add_parser("weight-curve", help="tabulate (and plot) the re-weighting terms")
    _common(p)
    p.add_argument("--kind", choices=("pos", "neg"), default="pos")
    p.add_argument("--tau", type=float, help="tau_p for pos, tau_n for neg (config default)")
    p.add_argument("--total-epochs", type=int, help="E_t (config default)")
    p.add_argument("--epochs", help="comma separated epochs (default 1, E_t/2, E_t)")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("eval", help="Recall@K for CSV embedding files")
    _common(p)
    p.add_argument("--query", type=Path, required=True)
    p.add_argument("--gallery", type=Path, help="omit to evaluate the query file against itself")
    p.add_argument("--ks", default="1,2,4,8")
    return parser


def _config(args):
    cfg = load(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _run_one(cfg, out: Path, plot: bool, quiet: bool) -> int:
    dataset = dataset_from_config(cfg)
    writer = ResultsWriter(out, cfg)

    def on_epoch(rec):
        writer.epoch(rec)
        if not quiet:
            r = ", ".join(f"R@{k}={v:.3f}" for k, v in rec.recall_at.items() if v is not None)
            log.info("epoch %d loss=%.4f pos=%.3f neg=%.3f %s", rec.epoch, rec.mean_loss,
                     rec.selected_pos_frac, rec.selected_neg_frac, r)

    try:
        records = train(cfg, dataset, on_epoch=on_epoch)
    except DivergenceError as exc:
        last = exc.records[-1] if exc.records else None
        writer.close("diverged", last, str(exc))
        log.error("%s", exc)
        return EXIT_NUMERIC
    writer.close("ok", records[-1])
    if plot:
        plot_training(epoch_records(out), out.with_suffix(".png"),
                      f"{cfg.loss.name} / {cfg.loss.variant}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = args.out or Path("results.jsonl")
    return _run_one(cfg, out, not args.no_plot, args.quiet)


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out_dir = args.out or Path("ablation")
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        for v in VARIANTS:
            loss_for(cfg.loss.name, v)
    except ValueError as exc:
        raise ConfigError(f"loss.name: {exc}") from None
    status = EXIT_OK
    arms = {}
    summary = []
    for v in VARIANTS:
        arm = copy.deepcopy(cfg)
        arm.loss.variant = v
        path = out_dir / f"{cfg.loss.name}_{ARM_FILE[v]}.jsonl"
        code = _run_one(arm, path, False, args.quiet)
        status = max(status, code)
        recs = epoch_records(path)
        arms[v] = recs
        final = recs[-1]["recall_at"] if recs else {}
        summary.append({"variant": v, "file": path.name, "status": code, "final_recall_at": final})
        if not args.quiet:
            log.info("%s: final %s", v, final)
    (out_dir / "ablation_summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    if not args.no_plot:
        plot_ablation(arms, out_dir / "ablation.png", k=cfg.eval.ks[0])
    return status


def cmd_gradcheck(args) -> int:
    cfg = _config(args)
    try:
        fn, mined = loss_for(args.loss, args.variant)
    except ValueError as exc:
        print(f"dynmetric gradcheck: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    params = LossParams(**LOSS_DEFAULTS[args.loss])
    th = MiningThresholds(cfg.thresholds.tau_p, cfg.thresholds.tau_n, cfg.thresholds.tau_b)
    rng = np.random.default_rng(cfg.seed)
    x, labels = random_batch(rng, args.n, args.d)
    total = cfg.schedule.epochs
    schedule = EpochSchedule(int(rng.integers(1, total + 1)), total)
    if args.inject_fault:
        fn = corrupted(fn)
    report = check_gradient(fn, x, labels, params, "mined" if mined else "all-pairs",
                            schedule, th, args.h)
    print(f"{args.loss}/{args.variant} {report}")
    return EXIT_OK if report.max_relative_error < GRADCHECK_TOLERANCE else EXIT_NUMERIC


def cmd_weight_curve(args) -> int:
    cfg = _config(args)
    total = args.total_epochs or cfg.schedule.epochs
    if args.tau is not None:
        tau = args.tau
    else:
        tau = cfg.thresholds.tau_p if args.kind == "pos" else cfg.thresholds.tau_n
    if args.epochs:
        epochs = [int(e) for e in args.epochs.split(",")]
    else:
        epochs = sorted({1, max(1, total // 2), total})
    rows = emit_weight_curve(args.kind, tau, total, epochs, args.points)
    if args.out:
        write_curve_csv(rows, args.out, args.kind)
        if not args.no_plot:
            plot_weight_curves(rows, args.out.with_suffix(".png"), args.kind)
    else:
        print("kind,epoch,s,weight")
        for e, s, w in rows:
            print(f"{args.kind},{e},{s!r},{w!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    query = load_csv(args.query)
    gallery = load_csv(args.gallery) if args.gallery else query
    ks = [int(k) for k in args.ks.split(",")]
    res = recall_at_k(
        normalize(query.features), query.class_ids,
        normalize(gallery.features), gallery.class_ids,
        ks, self_match_excluded=args.gallery is None,
    )
    line = json.dumps({"num_queries": res.num_queries, "recall_at": {str(k): v for k, v in res.recall.items()}})
    if args.out:
        args.out.write_text(line + "\n", encoding="utf-8")
    if not args.quiet or not args.out:
        print(line)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "weight-curve": cmd_weight_curve,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"dynmetric {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"dynmetric {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
