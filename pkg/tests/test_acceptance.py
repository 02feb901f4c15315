"""Acceptance gate. Each test checks one numbered criterion at its stated
tolerance and records a PASS/FAIL line shown in the terminal summary."""

import copy
import itertools
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from dynmetric.cli import main
from dynmetric.config import load
from dynmetric.core import EpochSchedule, LossParams, MiningThresholds, build_labels
from dynmetric.gradcheck import check_gradient, random_batch
from dynmetric.losses import BASE_LOSSES, STAR_LOSSES, DynamicWeights, dynamic_weight_pos
from dynmetric.mining import select_pairs
from dynmetric.model import dataset_from_config, train
from dynmetric.retrieval import recall_at_k
from dynmetric.similarity import cosine_matrix, normalize

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
PARAMS = {
    "contrastive": LossParams(0.5, 2, 40),
    "bd": LossParams(0.5, 2, 40),
    "triplet": LossParams(0.5, 2, 40),
    "lifted": LossParams(1.0, 2, 40),
    "ms": LossParams(0.5, 2, 50),
}


def test_1_gradient_certification(criterion):
    th = MiningThresholds()
    start = time.perf_counter()
    worst, skipped, checked = {}, 0, 0
    suites = [(f"{k}", fn, "all-pairs") for k, fn in BASE_LOSSES.items()]
    suites += [(f"{k}*", fn, "mined") for k, fn in STAR_LOSSES.items()]
    for label, fn, mask in suites:
        rng = np.random.default_rng(sum(map(ord, label)))
        worst[label] = 0.0
        for _ in range(100):
            x, lab = random_batch(rng)
            total = int(rng.integers(1, 51))
            sch = EpochSchedule(int(rng.integers(1, total + 1)), total)
            rep = check_gradient(fn, x, lab, PARAMS[label.rstrip("*")], mask, sch, th, h=1e-6)
            worst[label] = max(worst[label], rep.max_relative_error)
            skipped += rep.kink_skipped_count
            checked += rep.checked_count
    elapsed = time.perf_counter() - start
    top = max(worst.values())
    detail = (
        f"9 losses x 100 batches, max rel err {top:.2e} (< 1e-5), "
        f"{checked} coords checked, {skipped} kink-adjacent skipped, {elapsed:.1f}s (< 120s)"
    )
    criterion(1, len(worst) == 9 and top < 1e-5 and elapsed < 120, detail)


def test_2_reduction_identity(criterion):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        x, lab = random_batch(rng)
        s = cosine_matrix(normalize(x))
        mask = select_pairs(s, lab)
        for name, star in STAR_LOSSES.items():
            base = BASE_LOSSES[name](s, lab, PARAMS[name], mask)
            for w in (DynamicWeights.zero(), DynamicWeights(s, s, float(rng.uniform(0, 2)))):
                out = star(s, lab, PARAMS[name], mask, weights=w)
                worst = max(worst, abs(out.value - base.value))
    criterion(2, worst <= 1e-12, f"4 star losses x 1000 batches, max |star - base| = {worst:.1e} (<= 1e-12)")


def test_3_weight_identities(criterion):
    th = MiningThresholds(0.9, 0.1, 0.1)
    s = np.linspace(-1.0, 1.0, 2001)
    zero_at_tau = all(dynamic_weight_pos(0.9, th, EpochSchedule(e, 30)) == 0.0 for e in range(1, 31))
    endpoint = dynamic_weight_pos(0.0, th, EpochSchedule(30, 30))
    ratio_ok = True
    for total in (1, 2, 3, 7, 10, 30, 100):
        first = dynamic_weight_pos(s, th, EpochSchedule(1, total))
        last = dynamic_weight_pos(s, th, EpochSchedule(total, total))
        # equal up to double rounding of two different operation orders
        ratio_ok &= bool(np.all(np.abs(first - last / total) <= 4 * np.finfo(float).eps * np.abs(first)))
    ok = zero_at_tau and endpoint == 1.62 and ratio_ok
    criterion(3, ok, f"w_pos(tau_p)=0: {zero_at_tau}; w_pos(0) at E_t = {endpoint!r}; epoch-1 = w(E_t)/E_t: {ratio_ok}")


def _labelings(n):
    out = []

    def grow(prefix, top):
        if len(prefix) == n:
            out.append(prefix)
            return
        for v in range(top + 2):
            grow(prefix + [v], max(top, v))

    grow([0], 0)
    return out


@pytest.mark.slow
def test_4_mining_conformance(criterion):
    grid = [k / 20 for k in range(21)]
    pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    base = MiningThresholds(0.9, 0.1, 0.1)
    raised = {
        "tau_p": MiningThresholds(0.95, 0.1, 0.1),
        "tau_n": MiningThresholds(0.9, 0.05, 0.1),
        "tau_b": MiningThresholds(0.9, 0.1, 0.2),
    }
    mismatches, violations, total = 0, dict.fromkeys(raised, 0), 0
    for ids in _labelings(4):
        lab = build_labels(ids)
        for anchor in range(4):
            row = [p for p in pairs if anchor in p]
            rest = [p for p in pairs if anchor not in p]
            # every grid row for this anchor; the other entries sweep the grid too
            for t, vals in enumerate(itertools.product(range(21), repeat=3)):
                s = np.eye(4)
                for (i, j), v in zip(row, vals):
                    s[i, j] = s[j, i] = grid[v]
                for k, (i, j) in enumerate(rest):
                    s[i, j] = s[j, i] = grid[(t * (k + 3) + k) % 21]
                m = select_pairs(s, lab, base)
                pos, neg = oracles.mine(s.tolist(), ids, 0.9, 0.1, 0.1)
                got_pos = set(zip(*map(list, np.nonzero(m.pos_dir))))
                got_neg = set(zip(*map(list, np.nonzero(m.neg_dir))))
                mismatches += got_pos != pos or got_neg != neg
                hi = {k: select_pairs(s, lab, th) for k, th in raised.items()}
                violations["tau_p"] += bool((m.selected_pos & ~hi["tau_p"].selected_pos).any())
                violations["tau_n"] += bool((m.selected_neg & ~hi["tau_n"].selected_neg).any())
                violations["tau_b"] += bool((m.selected_neg & ~hi["tau_b"].selected_neg).any())
                total += 1
    ok = mismatches == 0 and not any(violations.values())
    criterion(4, ok, f"{total} grid batches (15 labelings x 4 anchors x 21^3 rows): "
                     f"{mismatches} oracle mismatches, monotonicity violations {violations}")


def test_5_recall_oracle(criterion):
    rng = np.random.default_rng(5)
    mismatches = 0
    for trial in range(1000):
        n = int(rng.integers(2, 65))
        d = int(rng.integers(1, 9))
        within = bool(trial % 2)
        ng = n if within else int(rng.integers(1, 65))
        if trial % 4 < 2:
            # small integers: exact similarities with many ties
            q = rng.integers(-2, 3, (n, d)).astype(float)
            g = q if within else rng.integers(-2, 3, (ng, d)).astype(float)
        else:
            q = normalize(rng.standard_normal((n, d)) + 1e-3)
            g = q if within else normalize(rng.standard_normal((ng, d)) + 1e-3)
        ql = rng.integers(0, 5, n)
        gl = ql if within else rng.integers(0, 5, ng)
        cands = ng - 1 if within else ng
        if cands < 1:
            continue
        ks = sorted({1, cands, *rng.integers(1, cands + 1, 3).tolist()})
        got = recall_at_k(q, ql, g, gl, ks, self_match_excluded=within).recall
        want = oracles.recall(q.tolist(), ql.tolist(), g.tolist(), gl.tolist(), ks, within)
        mismatches += got != want
    criterion(5, mismatches == 0, f"1000 random instances (n <= 64, half tie-heavy): {mismatches} mismatches")


@pytest.fixture(scope="module")
def desk_run():
    cfg = load(CONFIGS / "desk_bd_star.yaml")
    start = time.perf_counter()
    records = train(cfg, dataset_from_config(cfg))
    return cfg, records, time.perf_counter() - start


@pytest.mark.slow
def test_6_desk_training(criterion, desk_run):
    cfg, records, elapsed = desk_run
    r1 = records[-1].recall_at[1]
    criterion(6, r1 >= 0.90 and elapsed < 60,
              f"BD* {cfg.schedule.epochs} epochs: final Recall@1 {r1:.4f} (>= 0.90), {elapsed:.1f}s (< 60s)")


@pytest.mark.slow
def test_7_ablation_direction(criterion):
    cfg = load(CONFIGS / "desk_ablation_hard.yaml")
    seeds = range(5)
    means = {}
    for variant in ("base", "thresholded", "weighted", "star"):
        finals = []
        for seed in seeds:
            arm = copy.deepcopy(cfg)
            arm.loss.variant = variant
            arm.seed = seed
            finals.append(train(arm, dataset_from_config(arm))[-1].recall_at[1])
        means[variant] = float(np.mean(finals))
    floor = means["base"] - 0.02
    star_ok = means["star"] >= floor
    weighted_ok = means["weighted"] >= floor
    detail = (
        f"mean final R@1 over 5 seeds: BD {means['base']:.4f}, BD+T {means['thresholded']:.4f}, "
        f"BD+W {means['weighted']:.4f}, BD* {means['star']:.4f}; floor BD-0.02 = {floor:.4f}; "
        f"BD*>=floor {star_ok}, BD+W>=floor {weighted_ok}"
    )
    criterion(7, star_ok and weighted_ok, detail)


@pytest.mark.slow
def test_8_curriculum_observable(criterion, desk_run):
    _, records, _ = desk_run
    first, last = records[0].selected_pos_frac, records[-1].selected_pos_frac
    criterion(8, last < first, f"selected_pos_frac epoch 1 = {first:.5f}, epoch E_t = {last:.5f}")


@pytest.mark.slow
def test_9_determinism(criterion, tmp_path):
    same = []
    for name in ("desk_bd_star.yaml", "desk_ablation_hard.yaml"):
        outs = []
        for run in ("a", "b"):
            out = tmp_path / f"{run}_{name}.jsonl"
            assert main(["train", "--config", str(CONFIGS / name), "--out", str(out), "--quiet"]) == 0
            outs.append(out)
        same.append(outs[0].read_bytes() == outs[1].read_bytes())
        same.append(outs[0].with_suffix(".png").read_bytes() == outs[1].with_suffix(".png").read_bytes())
    criterion(9, all(same), f"2 configs x 2 runs: results and figure files byte-identical: {same}")
