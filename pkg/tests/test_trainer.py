import json
import math

import numpy as np
import pytest

from censorkit.data import Dataset, SynthTabularSpec, synth_tabular
from censorkit.errors import ConfigError, TrainingDiverged
from censorkit.model import LossBreakdown, ModelSpec, build_censor_model
from censorkit.trainer import TrainConfig, Trainer, train


class StubModel:
    """Two scalar parameters; reports whatever adversary accuracy it is told."""

    def __init__(self, acc=0.75, grad=1.0, total=1.0):
        self.theta = [np.zeros(2)]
        self.phi = [np.zeros(2)]
        self.acc = acc
        self.grad = grad
        self.total = total
        self.seen = []

    def actor_parameters(self):
        return self.theta

    def adversary_parameters(self):
        return self.phi

    def compute(self, batch, side=None):
        self.seen.append(batch)
        loss = LossBreakdown(0.0, 0.0, 0.0, self.total)
        return loss, self.acc, [np.full(2, self.grad)]


class IndexData:
    def __init__(self, n):
        self.n = n

    def __len__(self):
        return self.n

    def batch(self, idx):
        return np.asarray(idx)


def snapshot(m):
    return m.theta[0].copy(), m.phi[0].copy()


# -- single steps --


def test_step_true_moves_only_adversary():
    m = StubModel()
    t = Trainer(m, TrainConfig())
    _, u = t.step(None, True)
    assert u is False
    assert not m.theta[0].any() and m.phi[0].all()
    assert (m.phi[0] > 0).all()  # ascent


def test_step_false_moves_only_actor():
    m = StubModel()
    t = Trainer(m, TrainConfig())
    _, u = t.step(None, False)
    assert u is True
    assert not m.phi[0].any() and (m.theta[0] < 0).all()  # descent


def test_step_flips_twice():
    t = Trainer(StubModel(), TrainConfig())
    _, u = t.step(None, True)
    _, u = t.step(None, u)
    assert u is True


def test_step_returns_pre_update_loss():
    m = StubModel(total=2.5)
    loss, _ = Trainer(m, TrainConfig()).step(None, True)
    assert loss.total == 2.5


def test_gated_skips_confident_adversary():
    m = StubModel(acc=0.95)
    _, u = Trainer(m, TrainConfig(schedule="gated")).gated_step(None, True)
    assert u is False
    assert not m.theta[0].any() and not m.phi[0].any()


def test_gated_skips_actor_on_weak_adversary():
    m = StubModel(acc=0.5)
    _, u = Trainer(m, TrainConfig(schedule="gated")).gated_step(None, False)
    assert u is True
    assert not m.theta[0].any() and not m.phi[0].any()


@pytest.mark.parametrize("u", [True, False])
def test_gated_inside_band_matches_step(u):
    a, b = StubModel(acc=0.75), StubModel(acc=0.75)
    Trainer(a, TrainConfig()).step(None, u)
    Trainer(b, TrainConfig()).gated_step(None, u)
    assert all(np.array_equal(x, y) for x, y in zip(snapshot(a), snapshot(b)))


@pytest.mark.parametrize("acc", [0.3, 0.55, 0.75, 0.95, 1.0])
@pytest.mark.parametrize("u", [True, False])
def test_gating_only_skips(acc, u):
    m = StubModel(acc=acc)
    Trainer(m, TrainConfig(schedule="gated")).gated_step(None, u)
    theta, phi = snapshot(m)
    if u:
        assert not theta.any()
    else:
        assert not phi.any()


def test_zero_gradients_fixed_point():
    m = StubModel(grad=0.0)
    t = Trainer(m, TrainConfig())
    u = True
    for _ in range(6):
        _, u = t.step(None, u)
    assert not m.theta[0].any() and not m.phi[0].any()


def test_threshold_config_validated():
    with pytest.raises(ConfigError):
        TrainConfig(actor_lower_acc=0.95, adversary_upper_acc=0.9)
    with pytest.raises(ConfigError):
        TrainConfig(actor_lower_acc=0.4)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(schedule="random")


# -- runs --


def test_zero_steps():
    m = StubModel()
    trace = train(m, IndexData(5), TrainConfig(max_steps=0))
    assert len(trace) == 0
    assert not m.theta[0].any() and not m.phi[0].any()


@pytest.mark.parametrize("steps", [1, 2, 7, 10])
def test_strict_alternation_counts(steps):
    trace = train(StubModel(), IndexData(10), TrainConfig(max_steps=steps, batch_size=3))
    sides = [r.side for r in trace]
    assert sides[0] == "adversary"
    assert all(a != b for a, b in zip(sides, sides[1:]))
    assert sides.count("adversary") == math.ceil(steps / 2)
    assert sides.count("actor") == steps // 2
    assert all(r.updated for r in trace)


def test_epoch_covers_every_row_once():
    m = StubModel()
    train(m, IndexData(10), TrainConfig(max_steps=8, batch_size=3))
    # 10 rows in batches of 3: 3 + 3 + 3 + 1 per epoch
    sizes = [len(b) for b in m.seen]
    assert sizes == [3, 3, 3, 1, 3, 3, 3, 1]
    for epoch in (m.seen[:4], m.seen[4:]):
        assert sorted(np.concatenate(epoch).tolist()) == list(range(10))


def test_shuffling_depends_on_seed():
    a, b = StubModel(), StubModel()
    train(a, IndexData(20), TrainConfig(max_steps=2, batch_size=20, seed=1))
    train(b, IndexData(20), TrainConfig(max_steps=2, batch_size=20, seed=2))
    assert not np.array_equal(a.seen[0], b.seen[0])


def test_empty_dataset_rejected():
    with pytest.raises(ConfigError):
        train(StubModel(), IndexData(0), TrainConfig(max_steps=1))


def test_divergence_carries_trace():
    m = StubModel()
    t = Trainer(m, TrainConfig(max_steps=5))

    class Poisoned(IndexData):
        def batch(self, idx):
            if len(m.seen) == 3:
                m.total = float("nan")
            return super().batch(idx)

    with pytest.raises(TrainingDiverged) as info:
        t.run(Poisoned(10))
    assert len(info.value.trace) == 3


def test_gated_run_records_skips():
    trace = train(StubModel(acc=0.95), IndexData(4), TrainConfig(max_steps=4, schedule="gated"))
    assert [r.updated for r in trace] == [False, True, False, True]


def test_jsonl_log(tmp_path):
    path = tmp_path / "trace.jsonl"
    trace = train(StubModel(), IndexData(4), TrainConfig(max_steps=3, log_path=str(path)))
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert [l["step"] for l in lines] == [0, 1, 2]
    assert lines[0]["side"] == "adversary" and lines[1]["side"] == "actor"
    assert lines == [r.to_dict() for r in trace]


def _tabular(seed=0, n=300):
    d = synth_tabular(SynthTabularSpec(n=n, d=4, seed=seed))
    return Dataset(d.x, d.y, d.s)


def test_real_model_deterministic():
    traces = []
    for _ in range(2):
        m = build_censor_model(4, ModelSpec(hidden_units=6), np.random.default_rng(3))
        traces.append(train(m, _tabular(), TrainConfig(max_steps=40, batch_size=32, seed=9)))
    assert [r.to_dict() for r in traces[0]] == [r.to_dict() for r in traces[1]]


def test_beta_zero_reconstruction_decreases():
    m = build_censor_model(4, ModelSpec(hidden_units=8, alpha=1.0, beta=0.0, gamma=1.0), np.random.default_rng(0))
    trace = train(m, _tabular(n=800), TrainConfig(max_steps=2000, batch_size=32, learning_rate=3e-3))
    c = np.array([r.loss.c for r in trace])
    decile = len(c) // 10
    assert c[-decile:].mean() < c[:decile].mean()
