"""
Random hyperparameter search, per-t model selection and paired comparisons.

Each experiment draws its own seed from (master_seed, index), so a search
gives the same records whatever the number of worker processes.
"""

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import CensorKitError, ConfigError, TrainingDiverged, UndefinedMetricError
from .metrics import FairnessReport, Predictions, default_t_grid, delta, fairness_report
from .model import ModelSpec, build_censor_model
from .trainer import TrainConfig, train


@dataclass
class HyperPrior:
    encoder_layers: tuple = (1, 3)
    hidden_units: tuple = (1, 100)
    adversary_layers: tuple = (1, 3)
    alpha: float = 0.05
    beta: tuple = (0.0, 50.0)
    gamma: tuple = (0.0, 10.0)

    def __post_init__(self):
        for name in ("encoder_layers", "hidden_units", "adversary_layers", "beta", "gamma"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"bad prior range for {name}: {(lo, hi)}")
            setattr(self, name, (lo, hi))
        if self.encoder_layers[0] < 1 or self.hidden_units[0] < 1 or self.adversary_layers[0] < 1:
            raise ConfigError("layer and unit counts must be >= 1")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def sample_prior(prior, rng):
    """One independent draw per field, in a fixed order."""
    return ModelSpec(
        encoder_layers=int(rng.integers(prior.encoder_layers[0], prior.encoder_layers[1] + 1)),
        hidden_units=int(rng.integers(prior.hidden_units[0], prior.hidden_units[1] + 1)),
        adversary_layers=int(rng.integers(prior.adversary_layers[0], prior.adversary_layers[1] + 1)),
        alpha=prior.alpha,
        beta=float(rng.uniform(*prior.beta)),
        gamma=float(rng.uniform(*prior.gamma)),
    )


def experiment_seed(master_seed, index):
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ExperimentRecord:
    index: int
    seed: int
    split_seed: int
    hyperparams: dict
    valid: FairnessReport = None
    test: FairnessReport = None
    trace_summary: dict = None
    failed: bool = False
    error: str = None

    @property
    def beta(self):
        return self.hyperparams["beta"]

    @property
    def gamma(self):
        return self.hyperparams["gamma"]

    def to_dict(self):
        return {
            "index": self.index,
            "seed": self.seed,
            "split_seed": self.split_seed,
            "hyperparams": self.hyperparams,
            "valid": None if self.valid is None else self.valid.to_dict(),
            "test": None if self.test is None else self.test.to_dict(),
            "trace_summary": self.trace_summary,
            "failed": self.failed,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            index=d["index"], seed=d["seed"], split_seed=d["split_seed"], hyperparams=d["hyperparams"],
            valid=None if d["valid"] is None else FairnessReport.from_dict(d["valid"]),
            test=None if d["test"] is None else FairnessReport.from_dict(d["test"]),
            trace_summary=d.get("trace_summary"), failed=d["failed"], error=d.get("error"),
        )


def evaluate_model(model, part, t_grid):
    y_hat = model.predict(part.x)
    return fairness_report(Predictions(y_hat, part.s, part.y), t_grid)


def run_experiment(parts, index, master_seed, prior, train_config, t_grid, split_seed=0):
    """Sample, train and evaluate one model; failures come back as records."""
    seed = experiment_seed(master_seed, index)
    rng = np.random.default_rng(seed)
    spec = sample_prior(prior, rng)
    hyper = {
        "encoder_layers": spec.encoder_layers, "hidden_units": spec.hidden_units,
        "adversary_layers": spec.adversary_layers, "alpha": spec.alpha, "beta": spec.beta, "gamma": spec.gamma,
    }
    train_part, valid_part, test_part = parts
    try:
        model = build_censor_model(train_part.n_features, spec, rng)
        trace = train(model, train_part, replace(train_config, seed=seed % 2**32, log_path=None))
        return ExperimentRecord(
            index, seed, split_seed, hyper,
            valid=evaluate_model(model, valid_part, t_grid),
            test=evaluate_model(model, test_part, t_grid),
            trace_summary=trace.summary(),
        )
    except (TrainingDiverged, CensorKitError, FloatingPointError) as exc:
        return ExperimentRecord(index, seed, split_seed, hyper, failed=True, error=f"{type(exc).__name__}: {exc}")


_WORKER = {}


def _init_worker(*args):
    _WORKER["args"] = args


def _worker(index):
    parts, master_seed, prior, train_config, t_grid, split_seed = _WORKER["args"]
    return run_experiment(parts, index, master_seed, prior, train_config, t_grid, split_seed)


def run_search(parts, prior, n_experiments, train_config=None, master_seed=0, jobs=1, t_grid=None, split_seed=0):
    """Train ``n_experiments`` independently sampled models on (train, valid, test).

    Records come back ordered by experiment index regardless of ``jobs``.
    """
    if n_experiments < 0:
        raise ConfigError("n_experiments must be >= 0")
    if len(parts) != 3:
        raise ConfigError("search needs (train, valid, test) parts")
    train_config = train_config or TrainConfig()
    t_grid = default_t_grid() if t_grid is None else list(t_grid)
    args = (tuple(parts), master_seed, prior, train_config, t_grid, split_seed)
    if jobs <= 1 or n_experiments <= 1:
        return [run_experiment(*args[:1], i, *args[1:]) for i in range(n_experiments)]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=args) as pool:
        records = list(pool.map(_worker, range(n_experiments)))
    return sorted(records, key=lambda r: r.index)


# -- selection and comparison ----------------------------------------------------


def completed(records):
    return [r for r in records if not r.failed]


def select_per_t(records, t_grid=None):
    """For each t, the record maximizing validation delta.

    Ties go to the lower validation discrimination, then the lower index.
    """
    t_grid = default_t_grid() if t_grid is None else t_grid
    pool = completed(records)
    if not pool:
        raise ConfigError("no completed experiments to select from")
    out = {}
    for t in t_grid:
        out[t] = min(pool, key=lambda r: (-r.valid.delta_at(t), r.valid.y_disc, r.index))
    return out


def student_t_interval(values, level=0.95):
    """(mean, low, high) with a Student-t interval; bounds are nan for n < 2."""
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    if n == 0:
        raise UndefinedMetricError("interval of an empty sample")
    mean = float(v.mean())
    if n < 2:
        return mean, math.nan, math.nan
    half = float(stats.t.ppf(0.5 + level / 2, n - 1) * v.std(ddof=1) / math.sqrt(n))
    return mean, mean - half, mean + half


@dataclass
class ArmRun:
    """Test-set outcome of one arm on one split, per t of the grid."""

    split_seed: int
    deltas: list
    acc: list = field(default_factory=list)
    disc: list = field(default_factory=list)


def arm_run(split_seed, selection, t_grid):
    picks = [selection[t] for t in t_grid]
    return ArmRun(
        split_seed,
        [delta(r.test.y_acc, r.test.y_disc, t) for r, t in zip(picks, t_grid)],
        [r.test.y_acc for r in picks],
        [r.test.y_disc for r in picks],
    )


@dataclass
class PairedComparison:
    t_grid: list
    differences: list  # per t, one difference per split
    mean: list
    ci: list  # per t, (low, high)
    arm_a: list = field(default_factory=list)

    def rows(self):
        """Figure rows: t, delta, pairedDiff, ciLow, ciHigh, acc, disc (arm A means)."""
        out = []
        for i, t in enumerate(self.t_grid):
            row = {"t": t, "pairedDiff": self.mean[i], "ciLow": self.ci[i][0], "ciHigh": self.ci[i][1]}
            if self.arm_a:
                row["delta"] = float(np.mean([r.deltas[i] for r in self.arm_a]))
                row["acc"] = float(np.mean([r.acc[i] for r in self.arm_a]))
                row["disc"] = float(np.mean([r.disc[i] for r in self.arm_a]))
            out.append(row)
        return out


def paired_compare(runs_a, runs_b, t_grid):
    """Per t, the test delta difference A - B over paired splits with a 95% CI."""
    seeds_a = [r.split_seed for r in runs_a]
    seeds_b = [r.split_seed for r in runs_b]
    if sorted(seeds_a) != sorted(seeds_b) or len(set(seeds_a)) != len(seeds_a):
        raise ConfigError(f"arms are not paired: split seeds {seeds_a} vs {seeds_b}")
    by_seed = {r.split_seed: r for r in runs_b}
    diffs, means, cis = [], [], []
    for i in range(len(t_grid)):
        d = [a.deltas[i] - by_seed[a.split_seed].deltas[i] for a in runs_a]
        mean, lo, hi = student_t_interval(d)
        diffs.append(d)
        means.append(mean)
        cis.append((lo, hi))
    return PairedComparison(list(t_grid), diffs, means, cis, list(runs_a))


@dataclass(frozen=True)
class RatioPoint:
    split_seed: int
    arm: str
    index: int
    beta: float
    gamma: float
    ratio: float
    test_disc: float


@dataclass
class BetaRatioStudy:
    points: list  # RatioPoint per completed experiment
    spearman: float = None

    @property
    def defined(self):
        return self.spearman is not None


def beta_ratio_study(records):
    """beta / (beta + gamma) against test discrimination, with Spearman's rho.

    rho is None when either coordinate has no spread (ranks are degenerate).
    """
    pts = []
    for r in completed(records):
        total = r.beta + r.gamma
        if total <= 0:
            raise ConfigError(f"experiment {r.index} has beta + gamma = 0")
        pts.append(RatioPoint(r.split_seed, r.hyperparams.get("arm"), r.index, r.beta, r.gamma, r.beta / total,
                              r.test.y_disc))
    rho = None
    if len(pts) >= 2:
        ratios = [p.ratio for p in pts]
        discs = [p.test_disc for p in pts]
        if len(set(ratios)) > 1 and len(set(discs)) > 1:
            rho = float(stats.spearmanr(ratios, discs).statistic)
    return BetaRatioStudy(pts, rho)


# -- persistence ----------------------------------------------------------------------


def write_records(records, path):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_records(path):
    with open(path) as fh:
        return [ExperimentRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_selection_csv(selection, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "index", "valid_delta", "valid_acc", "valid_disc", "test_delta", "test_acc", "test_disc"])
        for t, r in selection.items():
            w.writerow([
                repr(t), r.index, repr(r.valid.delta_at(t)), repr(r.valid.y_acc), repr(r.valid.y_disc),
                repr(r.test.delta_at(t)), repr(r.test.y_acc), repr(r.test.y_disc),
            ])


def write_scatter_csv(study, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split_seed", "arm", "index", "beta", "gamma", "ratio", "test_disc"])
        for p in study.points:
            w.writerow([p.split_seed, p.arm or "", p.index, repr(p.beta), repr(p.gamma), repr(p.ratio),
                        repr(p.test_disc)])


def write_comparison_csv(comparison, path):
    cols = ["t", "delta", "pairedDiff", "ciLow", "ciHigh", "acc", "disc"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in comparison.rows():
            w.writerow([repr(row[c]) if c in row else "" for c in cols])
