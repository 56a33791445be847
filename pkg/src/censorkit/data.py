"""Tabular datasets: CSV ingestion, deterministic splits and a synthetic generator."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IngestionError
from .model import Batch

SPLIT_NAMES = ("train", "valid", "test")


@dataclass
class Dataset:
    """Feature matrix with binary labels ``y`` and sensitive bits ``s``.

    ``split`` optionally marks each row 0/1/2 for train/valid/test.
    """

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    split: np.ndarray = None
    feature_names: list = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.s = np.asarray(self.s, dtype=np.int64)
        if self.split is not None:
            self.split = np.asarray(self.split, dtype=np.int64)
        if self.feature_names is None:
            self.feature_names = [f"f{i}" for i in range(self.x.shape[1])]

    def __len__(self):
        return self.x.shape[0]

    @property
    def n_features(self):
        return self.x.shape[1]

    def batch(self, idx):
        return Batch(x=self.x[idx], s=self.s[idx], y=self.y[idx])

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            self.x[idx], self.y[idx], self.s[idx],
            None if self.split is None else self.split[idx],
            list(self.feature_names),
        )

    def part(self, name):
        if self.split is None:
            raise ConfigError("dataset carries no split markers")
        return self.subset(np.flatnonzero(self.split == SPLIT_NAMES.index(name)))

    def parts(self):
        return tuple(self.part(n) for n in SPLIT_NAMES)


@dataclass
class SplitSpec:
    train_fraction: float = 0.7
    valid_fraction: float = 0.1
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_fraction, self.valid_fraction, self.test_fraction)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fr}")


def split_indices(n, spec):
    """Seeded shuffle then contiguous cut into train/valid/test index arrays."""
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(n * spec.train_fraction))
    n_valid = int(round(n * spec.valid_fraction))
    parts = (perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:])
    if any(len(p) == 0 for p in parts):
        raise ConfigError(f"split of {n} rows leaves an empty part: {[len(p) for p in parts]}")
    return parts


def split(dataset, spec):
    parts = split_indices(len(dataset), spec)
    marks = np.empty(len(dataset), np.int64)
    for code, idx in enumerate(parts):
        marks[idx] = code
    return tuple(
        Dataset(dataset.x[idx], dataset.y[idx], dataset.s[idx], marks[idx], list(dataset.feature_names))
        for idx in parts
    )


# -- CSV ingestion -------------------------------------------------------------


@dataclass
class TabularSchema:
    label_column: str
    sensitive_column: str
    positive_sensitive_value: str
    categorical_columns: list = field(default_factory=list)
    numeric_columns: list = field(default_factory=list)
    positive_label_value: str = "1"

    def __post_init__(self):
        cat, num = set(self.categorical_columns), set(self.numeric_columns)
        special = {self.label_column, self.sensitive_column}
        if cat & num:
            raise ConfigError(f"columns classified twice: {sorted(cat & num)}")
        if special & (cat | num):
            raise ConfigError("label/sensitive columns must not also be feature columns")
        if self.label_column == self.sensitive_column:
            raise ConfigError("label and sensitive column must differ")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise IngestionError(f"{path}: empty file")
    return rows[0], [r for r in rows[1:] if r]


def load_csv(path, schema, split_spec=None):
    """Read a raw CSV into an encoded Dataset.

    Categorical columns are one-hot encoded in first-appearance order, numeric
    columns z-standardized with statistics from the training split only (all
    rows when no split is given; a constant column gets divisor 1), the
    sensitive column is 1 where it equals ``positive_sensitive_value``.
    """
    header, rows = _read_rows(path)
    header = [h.strip() for h in header]
    col = {h: i for i, h in enumerate(header)}
    wanted = [schema.label_column, schema.sensitive_column, *schema.categorical_columns, *schema.numeric_columns]
    for name in wanted:
        if name not in col:
            raise IngestionError(f"{path}: unknown column {name!r} (not in header)")
    classified = set(wanted)
    extra = [h for h in header if h not in classified]
    if extra:
        raise IngestionError(f"{path}: unclassified columns {extra}")
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise IngestionError(f"{path}: row {lineno} has {len(r)} fields, expected {len(header)}")

    n = len(rows)
    cat_set = set(schema.categorical_columns)
    blocks, names, numeric = [], [], []
    for h in header:
        if h in (schema.label_column, schema.sensitive_column):
            continue
        j = col[h]
        if h in cat_set:
            levels = {}
            for r in rows:
                levels.setdefault(r[j].strip(), len(levels))
            onehot = np.zeros((n, len(levels)))
            onehot[np.arange(n), [levels[r[j].strip()] for r in rows]] = 1.0
            blocks.append(onehot)
            names += [f"{h}={lv}" for lv in levels]
        else:
            vals = np.empty(n)
            for i, r in enumerate(rows):
                try:
                    vals[i] = float(r[j])
                except ValueError:
                    raise IngestionError(f"{path}: row {i + 2}: unparseable numeric {h}={r[j]!r}") from None
            numeric.append(len(names))
            blocks.append(vals[:, None])
            names.append(h)
    x = np.hstack(blocks) if blocks else np.zeros((n, 0))

    s = np.array([r[col[schema.sensitive_column]].strip() == schema.positive_sensitive_value for r in rows], np.int64)
    if n and (s.min() == s.max()):
        raise IngestionError(
            f"{path}: sensitive column {schema.sensitive_column!r} has a single group after binarization "
            f"(row 2 onwards all {'positive' if s[0] else 'negative'})"
        )
    y = np.array([r[col[schema.label_column]].strip() == schema.positive_label_value for r in rows], np.int64)

    marks = None
    fit_rows = np.arange(n)
    if split_spec is not None:
        parts = split_indices(n, split_spec)
        marks = np.empty(n, np.int64)
        for code, idx in enumerate(parts):
            marks[idx] = code
        fit_rows = parts[0]
    for k in numeric:
        mu = x[fit_rows, k].mean()
        sd = x[fit_rows, k].std()
        x[:, k] = (x[:, k] - mu) / (sd if sd > 0 else 1.0)
    return Dataset(x, y, s, marks, names)


def save_encoded_csv(dataset, path):
    """Write the encoded tensors (features, y, s, split) so they reload bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*dataset.feature_names, "y", "s", "split"])
        split_col = dataset.split if dataset.split is not None else np.full(len(dataset), -1)
        for row, y, s, sp in zip(dataset.x, dataset.y, dataset.s, split_col):
            w.writerow([repr(float(v)) for v in row] + [int(y), int(s), int(sp)])


def load_encoded_csv(path):
    header, rows = _read_rows(path)
    if header[-3:] != ["y", "s", "split"]:
        raise IngestionError(f"{path}: not an encoded dataset export")
    arr = np.array([[float(v) for v in r] for r in rows]) if rows else np.zeros((0, len(header)))
    split_col = arr[:, -1].astype(np.int64)
    return Dataset(
        arr[:, :-3], arr[:, -3].astype(np.int64), arr[:, -2].astype(np.int64),
        None if (split_col < 0).all() else split_col, header[:-3],
    )


# -- synthetic tabular data ---------------------------------------------------------

# the labelling rule is one fixed draw shared by every dataset, so seeds vary
# the sample but never the concept being learned
LABEL_RULE_SEED = 31


@dataclass
class SynthTabularSpec:
    n: int = 4000
    d: int = 10
    sensitive_effect: float = 2.0
    label_noise: float = 0.1
    affected_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 4:
            raise ConfigError("synthetic data needs n >= 4")
        if not 0 <= self.label_noise <= 0.5:
            raise ConfigError("label_noise must be in [0, 0.5]")
        if not 0 <= self.affected_fraction <= 1:
            raise ConfigError("affected_fraction must be in [0, 1]")
        if self.d < 1:
            raise ConfigError("d must be >= 1")


def label_weights(d):
    return np.random.default_rng(LABEL_RULE_SEED).uniform(0.5, 1.5, size=d)


def synth_tabular(spec):
    """Gaussian features where the first ``affected_fraction`` of columns are
    shifted by ``sensitive_effect * s``; ``y`` thresholds a fixed linear score
    at its sample median and is then flipped at rate ``label_noise``."""
    rng = np.random.default_rng(spec.seed)
    s = (rng.random(spec.n) < 0.5).astype(np.int64)
    x = rng.standard_normal((spec.n, spec.d))
    k = int(round(spec.affected_fraction * spec.d))
    x[:, :k] += spec.sensitive_effect * s[:, None]
    score = x @ label_weights(spec.d)
    y = (score > np.median(score)).astype(np.int64)
    flip = rng.random(spec.n) < spec.label_noise
    y = np.where(flip, 1 - y, y)
    return Dataset(x, y, s)
