import numpy as np
import pytest

from dynmetric.core import build_labels
from dynmetric.data import (
    FeatureDataset,
    PKSampler,
    SamplerConfig,
    generate_synthetic,
    load_csv,
    sample_batch,
    save_csv,
    split,
)
from dynmetric.similarity import normalize


def test_zero_spread_collapses_classes():
    ds = generate_synthetic(3, 4, 5, 0.0, 0)
    u = normalize(ds.features)
    s = u @ u.T
    same = ds.class_ids[:, None] == ds.class_ids[None, :]
    np.testing.assert_allclose(s[same], 1.0, atol=1e-12)


def test_clusters_are_tighter_than_classes():
    ds = generate_synthetic(8, 20, 32, 0.05, 0)
    u = normalize(ds.features)
    s = u @ u.T
    same = ds.class_ids[:, None] == ds.class_ids[None, :]
    off = ~np.eye(len(s), dtype=bool)
    within, between = s[same & off].mean(), s[~same].mean()
    # frozen from one generated dataset
    assert within == pytest.approx(0.928669657042208, abs=1e-12)
    assert between == pytest.approx(-0.03378774750010691, abs=1e-12)
    assert within > between


def test_synthetic_seeded():
    a, b = generate_synthetic(4, 5, 3, 0.2, 9), generate_synthetic(4, 5, 3, 0.2, 9)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.class_ids, b.class_ids)
    with pytest.raises(ValueError):
        generate_synthetic(1, 5, 3, 0.2, 0)


def test_csv_two_rows(tmp_path):
    p = tmp_path / "two.csv"
    p.write_text("label,f0,f1\n0,1.0,0.0\n1,0.0,1.0\n")
    ds = load_csv(p)
    assert len(ds) == 2 and ds.dim == 2
    assert len(np.unique(ds.class_ids)) == 2


@pytest.mark.parametrize(
    "text, match",
    [
        ("", "no header"),
        ("label,f0,f1\n0,1.0,0.0\n1,0.0,1.0,5.0\n", "row 3"),
        ("id,f0\n0,1.0\n", "header"),
        ("label,f0\nx,1.0\n", "row 2"),
        ("label,f0\n-1,1.0\n", "negative"),
        ("label,f0\n0,abc\n", "non-numeric"),
        ("label,f0\n", "no data"),
        ("label,f0\n0,nan\n", "NaN"),
    ],
)
def test_csv_errors(tmp_path, text, match):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ValueError, match=match):
        load_csv(p)


def test_csv_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "nope.csv")


def test_csv_round_trip(tmp_path):
    ds = generate_synthetic(3, 4, 5, 0.3, 2)
    save_csv(ds, tmp_path / "a.csv")
    back = load_csv(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.class_ids, ds.class_ids)
    save_csv(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert b"\r" not in (tmp_path / "a.csv").read_bytes()


def test_disjoint_split():
    ds = split(generate_synthetic(4, 3, 2, 0.1, 0), "disjoint-classes", 0.5, 0)
    train_c, eval_c = set(ds.train().class_ids), set(ds.eval().class_ids)
    assert len(train_c) == 2 and len(eval_c) == 2 and not train_c & eval_c


def test_shared_split():
    ds = split(generate_synthetic(3, 10, 2, 0.1, 0), "shared-classes", 0.8, 0)
    for c in range(3):
        assert (ds.train().class_ids == c).sum() == 8
        assert (ds.eval().class_ids == c).sum() == 2


def test_split_seeded_and_errors():
    base = generate_synthetic(4, 6, 2, 0.1, 0)
    np.testing.assert_array_equal(split(base, "shared-classes", 0.5, 3).split, split(base, "shared-classes", 0.5, 3).split)
    with pytest.raises(ValueError):
        split(base, "disjoint-classes", 0.1, 0)
    with pytest.raises(ValueError):
        split(base, "stratified", 0.5, 0)
    with pytest.raises(ValueError):
        split(base, "shared-classes", 1.0, 0)


def test_shared_split_keeps_every_eval_class_in_train():
    base = generate_synthetic(6, 3, 2, 0.1, 0)
    ds = split(base, "shared-classes", 0.2, 4)
    assert set(ds.eval().class_ids) <= set(ds.train().class_ids)


def test_sampler_default_composition():
    ds = generate_synthetic(30, 6, 4, 0.1, 0)
    cfg = SamplerConfig()
    feats, ids = PKSampler(ds, cfg).sample_batch()
    assert len(ids) == cfg.batch_size == 125
    classes, counts = np.unique(ids, return_counts=True)
    assert len(classes) == 25 and set(counts) == {5}
    assert feats.shape == (125, 4)


def test_sampler_takes_whole_tiny_dataset():
    ds = FeatureDataset(np.arange(8.0).reshape(4, 2), [0, 0, 1, 1])
    feats, ids = sample_batch(PKSampler(ds, SamplerConfig(2, 2, seed=5)))
    assert sorted(map(tuple, feats)) == sorted(map(tuple, ds.features))


def test_sampler_errors():
    one = FeatureDataset(np.ones((4, 2)), [0, 0, 0, 0])
    with pytest.raises(ValueError, match="classes"):
        PKSampler(one, SamplerConfig(2, 2))
    with pytest.raises(ValueError):
        SamplerConfig(1, 5)


def test_every_anchor_has_positives():
    ds = generate_synthetic(7, 9, 3, 0.1, 0)
    sampler = PKSampler(ds, SamplerConfig(4, 3, seed=2))
    for _ in range(30):
        idx = sampler.sample_indices()
        assert len(set(idx)) == len(idx)
        lab = build_labels(ds.class_ids[idx])
        assert lab.pos.sum(axis=1).min() >= 2


def test_sampler_seeded():
    ds = generate_synthetic(7, 9, 3, 0.1, 0)
    a = PKSampler(ds, SamplerConfig(4, 3, seed=2))
    b = PKSampler(ds, SamplerConfig(4, 3, seed=2))
    for _ in range(5):
        np.testing.assert_array_equal(a.sample_indices(), b.sample_indices())
