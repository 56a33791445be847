import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from censorkit.data import (
    Dataset, SplitSpec, SynthTabularSpec, TabularSchema, load_csv, load_encoded_csv, save_encoded_csv, split,
    split_indices, synth_tabular,
)
from censorkit.errors import ConfigError, IngestionError
from censorkit.images import (
    ImageSpec, montage, read_corpus, read_pgm, render_text, smooth_background, stamp_text, synth_images,
    write_corpus, write_pgm,
)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


SCHEMA = TabularSchema("y", "sex", "F", categorical_columns=["color"], numeric_columns=["age"])


# -- CSV --


def test_categorical_two_levels(tmp_path):
    path = write_csv(tmp_path / "a.csv", ["age", "color", "sex", "y"],
                     [[30, "red", "F", 1], [40, "blue", "M", 0], [50, "red", "M", 1]])
    ds = load_csv(path, SCHEMA)
    assert ds.feature_names == ["age", "color=red", "color=blue"]
    assert ds.x[:, 1:].tolist() == [[1, 0], [0, 1], [1, 0]]
    assert ds.s.tolist() == [1, 0, 0] and ds.y.tolist() == [1, 0, 1]


def test_constant_numeric_standardizes_to_zero(tmp_path):
    path = write_csv(tmp_path / "a.csv", ["age", "color", "sex", "y"],
                     [[30, "red", "F", 1], [30, "blue", "M", 0], [30, "red", "M", 1]])
    assert load_csv(path, SCHEMA).x[:, 0].tolist() == [0.0, 0.0, 0.0]


def test_numeric_standardized(tmp_path):
    path = write_csv(tmp_path / "a.csv", ["age", "color", "sex", "y"],
                     [[10, "r", "F", 1], [20, "r", "M", 0], [30, "r", "M", 1]])
    col = load_csv(path, SCHEMA).x[:, 0]
    assert col.mean() == pytest.approx(0.0) and col.std() == pytest.approx(1.0)


def test_stats_from_training_split_only(tmp_path):
    rows = [[float(i), "r", "F" if i % 2 else "M", i % 2] for i in range(20)]
    path = write_csv(tmp_path / "a.csv", ["age", "color", "sex", "y"], rows)
    spec = SplitSpec(0.5, 0.25, 0.25, seed=3)
    ds = load_csv(path, SCHEMA, spec)
    train_idx = split_indices(20, spec)[0]
    raw = np.arange(20.0)
    expected = (raw - raw[train_idx].mean()) / raw[train_idx].std()
    assert np.allclose(ds.x[:, 0], expected)
    assert ds.x[train_idx, 0].mean() == pytest.approx(0.0)


def test_unknown_column(tmp_path):
    path = write_csv(tmp_path / "a.csv", ["age", "colour", "sex", "y"], [[1, "r", "F", 1]])
    with pytest.raises(IngestionError, match="color"):
        load_csv(path, SCHEMA)


def test_unparseable_numeric_names_row(tmp_path):
    path = write_csv(tmp_path / "a.csv", ["age", "color", "sex", "y"],
                     [[1, "r", "F", 1], ["old", "r", "M", 0]])
    with pytest.raises(IngestionError, match="row 3"):
        load_csv(path, SCHEMA)


def test_single_sensitive_group(tmp_path):
    path = write_csv(tmp_path / "a.csv", ["age", "color", "sex", "y"], [[1, "r", "M", 1], [2, "r", "M", 0]])
    with pytest.raises(IngestionError, match="single group"):
        load_csv(path, SCHEMA)


def test_missing_file(tmp_path):
    with pytest.raises(IngestionError):
        load_csv(str(tmp_path / "nope.csv"), SCHEMA)


def test_ragged_row(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("age,color,sex,y\n1,r,F,1\n2,r,M\n")
    with pytest.raises(IngestionError, match="row 3"):
        load_csv(str(path), SCHEMA)


def test_schema_rejects_overlap():
    with pytest.raises(ConfigError):
        TabularSchema("y", "s", "1", categorical_columns=["a"], numeric_columns=["a"])
    with pytest.raises(ConfigError):
        TabularSchema("y", "s", "1", numeric_columns=["s"])


ADULT_LEVELS = {
    "workclass": 7, "education": 16, "marital-status": 7, "occupation": 14,
    "relationship": 6, "race": 5, "native-country": 41,
}
ADULT_NUMERIC = ["age", "fnlwgt", "education-num", "capital-gain", "capital-loss", "hours-per-week"]


def test_adult_shaped_file_has_102_features(tmp_path):
    rng = np.random.default_rng(0)
    header = ADULT_NUMERIC + list(ADULT_LEVELS) + ["sex", "income"]
    rows = []
    for i in range(60):
        row = [int(v) for v in rng.integers(0, 100, len(ADULT_NUMERIC))]
        row += [f"{name}_{i % k}" for name, k in ADULT_LEVELS.items()]
        row += ["Female" if i % 2 else "Male", ">50K" if i % 3 == 0 else "<=50K"]
        rows.append(row)
    path = write_csv(tmp_path / "adult.csv", header, rows)
    schema = TabularSchema("income", "sex", "Female", list(ADULT_LEVELS), ADULT_NUMERIC, positive_label_value=">50K")
    ds = load_csv(path, schema)
    assert ds.n_features == 102
    assert ds.y.sum() == 20 and ds.s.sum() == 30


def test_encoded_roundtrip(tmp_path):
    rows = [[float(i) * 1.7, "abc"[i % 3], "F" if i % 2 else "M", i % 2] for i in range(12)]
    ds = load_csv(write_csv(tmp_path / "a.csv", ["age", "color", "sex", "y"], rows), SCHEMA, SplitSpec(0.5, 0.25, 0.25))
    save_encoded_csv(ds, tmp_path / "enc.csv")
    back = load_encoded_csv(tmp_path / "enc.csv")
    for name in ("x", "y", "s", "split"):
        assert np.array_equal(getattr(ds, name), getattr(back, name))
    assert back.feature_names == ds.feature_names


# -- splits --


def _ds(n):
    return Dataset(np.arange(n, dtype=float)[:, None], np.zeros(n), np.arange(n) % 2)


def test_split_sizes():
    parts = split(_ds(100), SplitSpec(0.8, 0.1, 0.1))
    assert [len(p) for p in parts] == [80, 10, 10]


def test_split_deterministic():
    a = split_indices(50, SplitSpec(seed=4))
    b = split_indices(50, SplitSpec(seed=4))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_split_seeds_differ():
    for seed in range(100):
        a = np.concatenate(split_indices(100, SplitSpec(seed=seed)))
        b = np.concatenate(split_indices(100, SplitSpec(seed=seed + 1000)))
        assert not np.array_equal(a, b)


@settings(max_examples=50)
@given(st.integers(10, 300), st.integers(0, 2**32 - 1))
def test_split_disjoint_exhaustive(n, seed):
    parts = split_indices(n, SplitSpec(seed=seed))
    assert sorted(np.concatenate(parts).tolist()) == list(range(n))


def test_empty_split_rejected():
    with pytest.raises(ConfigError):
        split_indices(3, SplitSpec(0.8, 0.1, 0.1))


def test_split_fractions_validated():
    with pytest.raises(ConfigError):
        SplitSpec(0.5, 0.5, 0.5)


def test_parts_from_markers(tmp_path):
    rows = [[i, "r", "F" if i % 2 else "M", 1] for i in range(20)]
    ds = load_csv(write_csv(tmp_path / "a.csv", ["age", "color", "sex", "y"], rows), SCHEMA, SplitSpec(0.5, 0.25, 0.25))
    assert [len(p) for p in ds.parts()] == [10, 5, 5]


# -- synthetic tabular --


def test_null_effect_ks():
    # per feature: the KS statistic stays under the 1% critical value in >= 97 of 100 seeds
    passes = np.zeros(10, int)
    for seed in range(100):
        ds = synth_tabular(SynthTabularSpec(n=1000, d=10, sensitive_effect=0.0, seed=seed))
        g0, g1 = ds.x[ds.s == 0], ds.x[ds.s == 1]
        passes += [stats.ks_2samp(g0[:, j], g1[:, j]).pvalue > 0.01 for j in range(10)]
    assert passes.min() >= 97


def _probe_accuracy(x, s, steps=500, lr=0.5):
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(steps):
        p = 1 / (1 + np.exp(-(x @ w + b)))
        w -= lr * x.T @ (p - s) / len(s)
        b -= lr * np.mean(p - s)
    return np.mean(((x @ w + b) > 0) == (s == 1))


def test_sensitive_recoverable():
    ds = synth_tabular(SynthTabularSpec(n=4000, d=10, sensitive_effect=2.0, affected_fraction=0.5, seed=0))
    assert _probe_accuracy(ds.x, ds.s) > 0.95


def test_synth_deterministic():
    a = synth_tabular(SynthTabularSpec(seed=5))
    b = synth_tabular(SynthTabularSpec(seed=5))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y) and np.array_equal(a.s, b.s)


@pytest.mark.parametrize("seed", range(20))
def test_label_base_rate(seed):
    rate = synth_tabular(SynthTabularSpec(seed=seed)).y.mean()
    assert 0.35 <= rate <= 0.65


def test_synth_spec_validated():
    with pytest.raises(ConfigError):
        SynthTabularSpec(label_noise=0.6)
    with pytest.raises(ConfigError):
        SynthTabularSpec(affected_fraction=1.5)
    with pytest.raises(ConfigError):
        SynthTabularSpec(n=3)


def test_affected_columns_shifted():
    ds = synth_tabular(SynthTabularSpec(n=20000, d=4, sensitive_effect=2.0, affected_fraction=0.5, seed=1))
    shift = ds.x[ds.s == 1].mean(axis=0) - ds.x[ds.s == 0].mean(axis=0)
    assert shift[:2] == pytest.approx([2.0, 2.0], abs=0.1)
    assert shift[2:] == pytest.approx([0.0, 0.0], abs=0.1)


# -- images --


def test_background_range():
    rng = np.random.default_rng(0)
    for _ in range(20):
        img = smooth_background(rng, 40, 48)
        assert img.min() >= 0.0 and img.max() <= 1.0


def test_stamp_changes_only_bbox():
    rng = np.random.default_rng(1)
    clean = smooth_background(rng, 40, 48) * 0.9
    texted, (top, left, h, w) = stamp_text(clean, rng)
    diff = texted != clean
    outside = diff.copy()
    outside[top:top + h, left:left + w] = False
    assert not outside.any() and diff.any()
    assert texted[diff].tolist() == [1.0] * int(diff.sum())


def test_corpus_halves():
    c = synth_images(ImageSpec(n_train=400, n_valid=4, n_test=4))
    assert c.train_s.sum() == 200
    assert c.train.shape == (400, 40, 48)
    assert c.train.min() >= 0 and c.train.max() <= 1


def test_pairs_differ_inside_bbox_only():
    c = synth_images(ImageSpec(n_train=2, n_valid=5, n_test=5))
    for a, b, (top, left, h, w) in zip(c.test.with_text, c.test.without_text, c.test.bboxes):
        diff = a != b
        diff[top:top + h, left:left + w] = False
        assert not diff.any()


def test_glyph_run_too_wide():
    with pytest.raises(ConfigError):
        ImageSpec(width=20, max_glyphs=8)


def test_render_text_shape():
    assert render_text("AB").shape[0] == 7


def test_pgm_roundtrip(tmp_path):
    img = np.linspace(0, 1, 12).reshape(3, 4)
    write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n") and len(raw) == len(b"P5\n4 3\n255\n") + 12
    back = read_pgm(tmp_path / "a.pgm")
    assert np.array_equal(np.round(back * 255), np.round(img * 255))


def test_pgm_rejects_other_formats(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(IngestionError):
        read_pgm(tmp_path / "a.pgm")


def test_pgm_truncated(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P5\n2 2\n255\n\x00")
    with pytest.raises(IngestionError):
        read_pgm(tmp_path / "a.pgm")


def test_montage_width():
    a = np.zeros((4, 5))
    assert montage(a, a, a).shape == (4, 5 * 3 + 2 * 2)


def test_corpus_manifest_roundtrip(tmp_path):
    c = synth_images(ImageSpec(n_train=4, n_valid=2, n_test=2))
    write_corpus(c, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["train"]) == 4 and len(manifest["test"]) == 4
    back = read_corpus(tmp_path)
    assert np.array_equal(back.train_s, c.train_s)
    assert np.abs(back.test.with_text - c.test.with_text).max() <= 0.5 / 255 + 1e-12
    assert back.test.bboxes == [tuple(b) for b in c.test.bboxes]
