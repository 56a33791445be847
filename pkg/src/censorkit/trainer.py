"""
Alternating stochastic minimax training.

Any model exposing ``actor_parameters()``, ``adversary_parameters()`` and
``compute(batch, side) -> (LossBreakdown, adversary_accuracy, grads)`` can be
trained here; both the tabular censor model and the image anonymizer do.
Datasets only need ``len()`` and ``batch(indices)``.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingDiverged
from .nn import SGD, Adam

log = logging.getLogger(__name__)

ADVERSARY = "adversary"
ACTOR = "actor"


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_steps: int = 2000
    seed: int = 0
    schedule: str = "strict"  # "strict" | "gated"
    adversary_upper_acc: float = 0.9
    actor_lower_acc: float = 0.6
    optimizer: str = "adam"  # "adam" | "sgd"
    learning_rate: float = 1e-3
    adversary_learning_rate: float = None  # defaults to learning_rate
    log_path: str = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if not 0.5 <= self.actor_lower_acc <= self.adversary_upper_acc <= 1.0:
            raise ConfigError("need 0.5 <= actor_lower_acc <= adversary_upper_acc <= 1")
        if self.schedule not in ("strict", "gated"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class StepRecord:
    step: int
    side: str
    updated: bool
    loss: object
    adversary_accuracy: float

    def to_dict(self):
        return {
            "step": self.step,
            "side": self.side,
            "updated": self.updated,
            "loss": self.loss.to_dict(),
            "adversary_accuracy": self.adversary_accuracy,
        }


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def totals(self):
        return np.array([r.loss.total for r in self.records])

    def summary(self):
        if not self.records:
            return {"steps": 0}
        last = self.records[-1]
        return {
            "steps": len(self.records),
            "actor_updates": sum(r.updated and r.side == ACTOR for r in self.records),
            "adversary_updates": sum(r.updated and r.side == ADVERSARY for r in self.records),
            "final_loss": last.loss.to_dict(),
            "final_adversary_accuracy": last.adversary_accuracy,
        }


def _optimizer(params, config, lr):
    if config.optimizer == "adam":
        return Adam(params, learning_rate=lr)
    return SGD(params, learning_rate=lr)


class Trainer:
    """Holds one optimizer per side; ``u=True`` means the adversary moves next."""

    def __init__(self, model, config):
        self.model = model
        self.config = config
        adv_lr = config.adversary_learning_rate or config.learning_rate
        self.actor_opt = _optimizer(model.actor_parameters(), config, config.learning_rate)
        self.adversary_opt = _optimizer(model.adversary_parameters(), config, adv_lr)

    def _run(self, batch, u, gated):
        side = ADVERSARY if u else ACTOR
        loss, acc, grads = self.model.compute(batch, side)
        if not math.isfinite(loss.total):
            raise TrainingDiverged(f"non-finite loss {loss.total}")
        allowed = True
        if gated:
            if u and acc > self.config.adversary_upper_acc:
                allowed = False
            elif not u and acc < self.config.actor_lower_acc:
                allowed = False
        if allowed:
            if u:
                self.adversary_opt.step(grads, direction=+1)
            else:
                self.actor_opt.step(grads, direction=-1)
        return loss, acc, allowed

    def step(self, batch, u):
        """One strictly alternating update. Returns (pre-update loss, next u)."""
        loss, _, _ = self._run(batch, u, gated=False)
        return loss, not u

    def gated_step(self, batch, u):
        """As ``step``, but skip the adversary when it is already too accurate
        and skip the actor when the adversary is too weak to be informative."""
        loss, _, _ = self._run(batch, u, gated=True)
        return loss, not u

    def run(self, dataset, trace=None):
        cfg = self.config
        trace = trace if trace is not None else TrainTrace()
        rng = np.random.default_rng(cfg.seed)
        n = len(dataset)
        if n == 0 and cfg.max_steps:
            raise ConfigError("cannot train on an empty dataset")
        log_fh = open(cfg.log_path, "w") if cfg.log_path else None
        gated = cfg.schedule == "gated"
        u = True
        order, pos = None, n
        try:
            for step in range(cfg.max_steps):
                if pos >= n:
                    order, pos = rng.permutation(n), 0
                idx = order[pos:pos + cfg.batch_size]
                pos += cfg.batch_size
                batch = dataset.batch(idx)
                try:
                    loss, acc, updated = self._run(batch, u, gated)
                except TrainingDiverged as exc:
                    exc.trace = trace
                    raise
                rec = StepRecord(step, ADVERSARY if u else ACTOR, updated, loss, acc)
                trace.records.append(rec)
                if log_fh:
                    log_fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
                if step % 500 == 0:
                    log.debug("step %d %s loss=%.5f adv_acc=%.3f", step, rec.side, loss.total, acc)
                u = not u
        finally:
            if log_fh:
                log_fh.close()
        return trace


def train(model, dataset, config):
    """Run ``config.max_steps`` alternating minibatch steps; returns the trace."""
    return Trainer(model, config).run(dataset)
