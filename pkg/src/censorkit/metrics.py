"""
Fairness statistics and the empirical H-divergence audit.

The divergence oracle works over a finite support and uses exact rational
arithmetic, so it can be compared bit-for-bit against an independent
total-variation computation.
"""

import csv
import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import IntractableOracleError, UndefinedMetricError

MAX_SUPPORT = 4096
# full 2^k hypothesis enumeration up to this many support points; beyond it the
# per-point choice (which is what the full enumeration reduces to) is used
FULL_ENUMERATION = 12
DEFAULT_BINS = 8


@dataclass
class Predictions:
    y_hat: np.ndarray
    s: np.ndarray
    y: np.ndarray = None
    scores: np.ndarray = None

    def __post_init__(self):
        self.y_hat = np.asarray(self.y_hat).astype(np.int64)
        self.s = np.asarray(self.s).astype(np.int64)
        n = len(self.y_hat)
        if len(self.s) != n:
            raise ValueError("y_hat and s must have equal length")
        if not np.isin(self.y_hat, (0, 1)).all() or not np.isin(self.s, (0, 1)).all():
            raise ValueError("y_hat and s must be binary")
        if self.y is not None:
            self.y = np.asarray(self.y).astype(np.int64)
            if len(self.y) != n:
                raise ValueError("y must match y_hat in length")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64)


def group_rates(y_hat, s):
    y_hat = np.asarray(y_hat)
    s = np.asarray(s)
    n0 = int(np.sum(s == 0))
    n1 = int(np.sum(s == 1))
    if n0 == 0 or n1 == 0:
        raise UndefinedMetricError("discrimination needs both sensitive groups to be non-empty")
    return Fraction(int(y_hat[s == 0].sum()), n0), Fraction(int(y_hat[s == 1].sum()), n1)


def discrimination(p):
    """|P(yhat=1 | s=0) - P(yhat=1 | s=1)| on the given sample."""
    r0, r1 = group_rates(p.y_hat, p.s)
    return float(abs(r0 - r1))


def accuracy(p):
    if p.y is None:
        raise UndefinedMetricError("accuracy needs true labels")
    if len(p.y) == 0:
        raise UndefinedMetricError("accuracy of an empty sample")
    return float(Fraction(int(np.sum(p.y_hat == p.y)), len(p.y)))


def delta(y_acc, y_disc, t):
    if t < 0:
        raise ValueError("t must be non-negative")
    return y_acc - t * y_disc


def delta_curve(y_acc, y_disc, t_grid):
    return [(float(t), delta(y_acc, y_disc, float(t))) for t in t_grid]


def default_t_grid(points=31, upper=3.0):
    return [upper * i / (points - 1) for i in range(points)]


# -- H-divergence ----------------------------------------------------------------


def _key(v):
    if isinstance(v, np.ndarray):
        return tuple(v.tolist())
    if isinstance(v, (list, tuple)):
        return tuple(v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def empirical_distribution(samples):
    counts = Counter(_key(v) for v in samples)
    n = sum(counts.values())
    return {k: Fraction(c, n) for k, c in counts.items()}


def _gap(pa, pb, accepted):
    return sum((pa.get(v, 0) - pb.get(v, 0) for v in accepted), Fraction(0))


def _sup_all_functions(pa, pb):
    support = sorted(set(pa) | set(pb), key=repr)
    if len(support) > MAX_SUPPORT:
        raise IntractableOracleError(
            f"support of {len(support)} values exceeds the {MAX_SUPPORT}-value enumeration cap"
        )
    if len(support) <= FULL_ENUMERATION:
        best = Fraction(0)
        # every subset of the support is one hypothesis (its indicator); the
        # complement of each subset is enumerated too, so no absolute value
        for bits in itertools.product((0, 1), repeat=len(support)):
            accepted = [v for v, b in zip(support, bits) if b]
            best = max(best, _gap(pa, pb, accepted))
        return best
    # the objective is additive over support points, so the enumeration
    # decomposes into an independent accept/reject choice per point
    return sum((max(Fraction(0), pa.get(v, 0) - pb.get(v, 0)) for v in support), Fraction(0))


def _sup_axis_thresholds(pa, pb):
    support = sorted(set(pa) | set(pb))
    if any(isinstance(v, tuple) for v in support):
        raise ValueError("axisThresholds is defined on 1-D samples only")
    best = Fraction(0)
    cum = Fraction(0)
    total = sum((pa.get(v, 0) - pb.get(v, 0) for v in support), Fraction(0))
    # hypotheses 1[x <= c] and their complements 1[x > c], c over the support and -inf
    best = max(best, total, -total)
    for v in support:
        cum += pa.get(v, 0) - pb.get(v, 0)
        best = max(best, cum, total - cum)
    return best


HYPOTHESIS_CLASSES = {"all": _sup_all_functions, "thresholds": _sup_axis_thresholds}


def empirical_h_divergence_exact(a, b, hclass="all"):
    """Exact (Fraction) empirical H-divergence: sup over the class of 2*(mean_A eta - mean_B eta)."""
    if len(a) == 0 or len(b) == 0:
        raise UndefinedMetricError("H-divergence needs two non-empty samples")
    if hclass not in HYPOTHESIS_CLASSES:
        raise ValueError(f"unknown hypothesis class {hclass!r}")
    return 2 * HYPOTHESIS_CLASSES[hclass](empirical_distribution(a), empirical_distribution(b))


def empirical_h_divergence(a, b, hclass="all"):
    """Empirical H-divergence between two finite samples.

    ``hclass`` is "all" (every binary function on the observed support) or
    "thresholds" (1-D threshold rules and their complements). Both classes are
    symmetric, so the value lies in [0, 2].
    """
    return float(empirical_h_divergence_exact(a, b, hclass))


def discretize(reps, bins=DEFAULT_BINS, ranges=None):
    """Quantize each column into ``bins`` equal-width bins over its observed range.

    Returns an integer array of bin indices with the same shape as ``reps``
    (1-D input is treated as a single column).
    """
    r = np.asarray(reps, dtype=np.float64)
    flat = r.reshape(len(r), -1)
    if ranges is None:
        lo, hi = flat.min(axis=0), flat.max(axis=0)
    else:
        lo, hi = ranges
    width = np.where(hi > lo, (hi - lo) / bins, 1.0)
    idx = np.floor((flat - lo) / width).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    return idx.reshape(r.shape) if r.ndim > 1 else idx[:, 0]


def _cells(reps, bins, refine_by=None):
    """Discretized representation cells as hashable keys.

    ``refine_by`` (a decision per row) splits cells so that the decision rule
    is constant on every cell, which puts it inside the all-functions class.
    """
    d = discretize(reps, bins)
    d = d.reshape(len(d), -1)
    if refine_by is None:
        return [tuple(row) for row in d.tolist()]
    return [tuple(row) + (int(e),) for row, e in zip(d.tolist(), refine_by)]


@dataclass(frozen=True)
class Lemma2Certificate:
    y_disc: float
    half_divergence: float
    holds: bool

    @property
    def margin(self):
        return self.half_divergence - self.y_disc


def lemma2_certificate(p, representations, bins=DEFAULT_BINS):
    """Check discrimination <= half the empirical H-divergence between groups.

    The class is all binary functions over discretized representation cells,
    refined by the classifier's own decisions so the classifier belongs to it.
    """
    r0, r1 = group_rates(p.y_hat, p.s)
    disc = abs(r0 - r1)
    cells = _cells(representations, bins, refine_by=p.y_hat)
    a = [c for c, s in zip(cells, p.s) if s == 0]
    b = [c for c, s in zip(cells, p.s) if s == 1]
    half = empirical_h_divergence_exact(a, b, "all") / 2
    return Lemma2Certificate(float(disc), float(half), bool(disc <= half))


def adversary_proxy_divergence(adversary, representations, s):
    """2 * |rate(s=0) - rate(s=1)| of the adversary thresholded at 0.5 (ties -> 0)."""
    scores = adversary.forward(np.asarray(representations, dtype=np.float64))[:, 0]
    eta = (scores > 0.5).astype(np.int64)
    r0, r1 = group_rates(eta, s)
    return float(2 * abs(r0 - r1))


def proxy_and_oracle(adversary, representations, s, bins=DEFAULT_BINS):
    """(proxy divergence, oracle divergence) over a common discretized support."""
    reps = np.asarray(representations, dtype=np.float64)
    s = np.asarray(s)
    scores = adversary.forward(reps)[:, 0]
    eta = (scores > 0.5).astype(np.int64)
    r0, r1 = group_rates(eta, s)
    cells = _cells(reps, bins, refine_by=eta)
    a = [c for c, g in zip(cells, s) if g == 0]
    b = [c for c, g in zip(cells, s) if g == 1]
    return float(2 * abs(r0 - r1)), empirical_h_divergence(a, b, "all")


# -- reports -----------------------------------------------------------------------


@dataclass
class FairnessReport:
    y_acc: float
    y_disc: float
    delta_curve: list = field(default_factory=list)
    h_divergence: float = None
    lemma2_margin: float = None

    def to_dict(self):
        return {
            "y_acc": self.y_acc,
            "y_disc": self.y_disc,
            "delta_curve": [[t, v] for t, v in self.delta_curve],
            "h_divergence": self.h_divergence,
            "lemma2_margin": self.lemma2_margin,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            y_acc=d["y_acc"],
            y_disc=d["y_disc"],
            delta_curve=[(t, v) for t, v in d["delta_curve"]],
            h_divergence=d.get("h_divergence"),
            lemma2_margin=d.get("lemma2_margin"),
        )

    def delta_at(self, t):
        return delta(self.y_acc, self.y_disc, t)

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_delta_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "delta", "acc", "disc"])
            for t, v in self.delta_curve:
                w.writerow([repr(t), repr(v), repr(self.y_acc), repr(self.y_disc)])


def fairness_report(p, t_grid=None, representations=None, bins=DEFAULT_BINS):
    t_grid = default_t_grid() if t_grid is None else t_grid
    disc = discrimination(p)
    # without labels there is no accuracy, hence no tradeoff curve
    acc = accuracy(p) if p.y is not None else None
    curve = delta_curve(acc, disc, t_grid) if acc is not None else []
    report = FairnessReport(y_acc=acc, y_disc=disc, delta_curve=curve)
    if representations is not None:
        cert = lemma2_certificate(p, representations, bins)
        report.h_divergence = 2 * cert.half_divergence
        report.lemma2_margin = cert.margin
    return report
