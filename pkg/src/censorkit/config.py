"""Experiment configuration: one JSON document, every field defaulted."""

import dataclasses
import json
from dataclasses import dataclass, field

from .anon import ExpertSpec
from .data import SplitSpec, SynthTabularSpec, TabularSchema
from .errors import ConfigError, IngestionError
from .images import ImageSpec
from .model import ModelSpec
from .search import HyperPrior
from .trainer import TrainConfig

MODES = ("fairness", "search", "image", "audit")


def _build(cls, data, where):
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class CsvSource:
    path: str
    schema: TabularSchema

    @classmethod
    def from_dict(cls, d):
        if "path" not in d or "schema" not in d:
            raise ConfigError("csv source needs 'path' and 'schema'")
        return cls(d["path"], _build(TabularSchema, d["schema"], "csv.schema"))

    def to_dict(self):
        return {"path": self.path, "schema": dataclasses.asdict(self.schema)}


@dataclass
class Arm:
    """A named variant of the base training config used in paired comparisons."""

    name: str
    train: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)


@dataclass
class SearchSection:
    n_experiments: int = 10
    split_seeds: list = field(default_factory=lambda: [0])
    prior: HyperPrior = field(default_factory=HyperPrior)
    arms: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        prior = HyperPrior.from_dict(d.pop("prior", {}) or {})
        arms = [_build(Arm, a, "search.arms[]") for a in d.pop("arms", []) or []]
        out = _build(cls, d, "search")
        out.prior, out.arms = prior, arms
        if out.n_experiments < 0:
            raise ConfigError("search.n_experiments must be >= 0")
        for a in arms:
            _kw(a.train, [f.name for f in dataclasses.fields(TrainConfig)], f"search.arms[{a.name}].train")
            _kw(a.model, [f.name for f in dataclasses.fields(HyperPrior)], f"search.arms[{a.name}].model")
        if len(arms) not in (0, 1, 2):
            raise ConfigError("search.arms holds at most two arms")
        return out


@dataclass
class ImageSection:
    corpus: ImageSpec = field(default_factory=ImageSpec)
    expert: ExpertSpec = field(default_factory=ExpertSpec)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=256, max_steps=40000))
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(batch_size=32, max_steps=5000, schedule="gated", adversary_learning_rate=1e-4)
    )
    alpha: float = 1.0
    beta: float = 10.0
    reference_steps: int = 600

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        base = cls()
        return cls(
            corpus=_build(ImageSpec, d.pop("corpus", None), "image.corpus"),
            expert=_build(ExpertSpec, d.pop("expert", None), "image.expert"),
            pretrain=_override(base.pretrain, d.pop("pretrain", None), "image.pretrain"),
            train=_override(base.train, d.pop("train", None), "image.train"),
            **_kw(d, ("alpha", "beta", "reference_steps"), "image"),
        )


@dataclass
class AuditSection:
    predictions: str = None
    representations: str = None
    bins: int = 8


def _override(base, data, where):
    if not data:
        return base
    return _build(type(base), {**dataclasses.asdict(base), **data}, where)


def _kw(d, allowed, where):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return d


@dataclass
class ExperimentConfig:
    mode: str = "fairness"
    seed: int = 0
    out: str = "out"
    synthetic: SynthTabularSpec = None
    csv: CsvSource = None
    split: SplitSpec = field(default_factory=SplitSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    t_grid: list = None
    search: SearchSection = field(default_factory=SearchSection)
    image: ImageSection = field(default_factory=ImageSection)
    audit: AuditSection = field(default_factory=AuditSection)

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode in ("fairness", "search"):
            if self.synthetic is not None and self.csv is not None:
                raise ConfigError("give exactly one dataset source: 'synthetic' or 'csv'")
            if self.synthetic is None and self.csv is None:
                self.synthetic = SynthTabularSpec()
        if self.mode == "audit" and not self.audit.predictions:
            raise ConfigError("audit mode needs a predictions CSV")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return self

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"config: unknown keys {unknown}")
        synth = d.get("synthetic")
        csv_src = d.get("csv")
        return cls(
            mode=d.get("mode", "fairness"),
            seed=int(d.get("seed", 0)),
            out=d.get("out", "out"),
            synthetic=None if synth is None else _build(SynthTabularSpec, synth, "synthetic"),
            csv=None if csv_src is None else CsvSource.from_dict(csv_src),
            split=_build(SplitSpec, d.get("split"), "split"),
            model=_build(ModelSpec, d.get("model"), "model"),
            train=_build(TrainConfig, d.get("train"), "train"),
            t_grid=d.get("t_grid"),
            search=SearchSection.from_dict(d.get("search")),
            image=ImageSection.from_dict(d.get("image")),
            audit=_build(AuditSection, d.get("audit"), "audit"),
        )

    def to_dict(self):
        """Snapshot of everything that shapes the results (the output path does not)."""
        out = dataclasses.asdict(self)
        del out["out"]
        if self.csv is not None:
            out["csv"] = self.csv.to_dict()
        return out


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IngestionError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data)


def write_config(config, path):
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
