"""Encoder / decoder / predictor / adversary composed into one minimax objective."""

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import DTYPE, PROB_CLAMP, Affine, Network, ReLU, check_gradients, mlp, near_relu_kink


@dataclass(frozen=True)
class LossBreakdown:
    c: float
    d: float
    e: float
    total: float

    def to_dict(self):
        return asdict(self)


@dataclass
class Batch:
    """Features ``x`` (n, d), sensitive bits ``s`` and optional labels ``y``.

    Unlabelled rows carry ``y = -1``; they are skipped by the prediction cost.
    """

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=DTYPE)
        self.s = np.asarray(self.s, dtype=np.int64)
        n = self.x.shape[0]
        if self.s.shape != (n,) or not np.isin(self.s, (0, 1)).all():
            raise ShapeError("s must be a length-n 0/1 sequence")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.int64)
            if self.y.shape != (n,) or not np.isin(self.y, (-1, 0, 1)).all():
                raise ShapeError("y must be a length-n sequence over {0, 1} (-1 = unlabelled)")

    def __len__(self):
        return self.x.shape[0]


def _log_likelihood(prob, target):
    """Mean of t log p + (1-t) log(1-p) over rows, plus d/dp (clamp-aware)."""
    p = prob[:, 0]
    n = p.shape[0]
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = target.astype(DTYPE)
    value = float(np.mean(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)))
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    grad = np.where(inside, (t / pc - (1.0 - t) / (1.0 - pc)) / n, 0.0)
    return value, grad[:, None]


class CensorModel:
    """Joint loss ``alpha*C + beta*D + gamma*E`` over four networks.

    The actor (encoder, decoder, predictor) descends on the total, the
    adversary ascends on it. The decoder is present iff ``alpha > 0`` and the
    predictor iff ``gamma > 0``.
    """

    def __init__(self, encoder, adversary, decoder=None, predictor=None, alpha=0.0, beta=0.0, gamma=0.0):
        if min(alpha, beta, gamma) < 0:
            raise ConfigError("loss weights must be non-negative")
        if (decoder is not None) != (alpha > 0):
            raise ConfigError("decoder must be present exactly when alpha > 0")
        if (predictor is not None) != (gamma > 0):
            raise ConfigError("predictor must be present exactly when gamma > 0")
        rep = encoder.output_shape
        for name, net in (("decoder", decoder), ("predictor", predictor), ("adversary", adversary)):
            if net is not None and net.input_shape != rep:
                raise ShapeError(f"{name} input {net.input_shape} != representation {rep}")
        if decoder is not None and decoder.output_shape != encoder.input_shape:
            raise ShapeError("decoder must map back to the encoder's input shape")
        self.encoder = encoder
        self.decoder = decoder
        self.predictor = predictor
        self.adversary = adversary
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.gamma = float(gamma)

    # -- parameter groups --

    def actor_networks(self):
        return [n for n in (self.encoder, self.decoder, self.predictor) if n is not None]

    def actor_parameters(self):
        return [p for net in self.actor_networks() for p in net.parameters]

    def actor_gradients(self):
        return [g for net in self.actor_networks() for g in net.gradients]

    def adversary_parameters(self):
        return self.adversary.parameters

    def adversary_gradients(self):
        return self.adversary.gradients

    def networks(self):
        return self.actor_networks() + [self.adversary]

    # -- costs --

    def encode(self, x):
        return self.encoder.forward(x)

    def reconstruction_cost(self, batch):
        if self.decoder is None:
            raise ConfigError("reconstruction cost needs a decoder (alpha > 0)")
        x = batch.x
        xh = self.decoder.forward(self.encode(x))
        return float(np.mean(np.sum((x - xh).reshape(len(x), -1) ** 2, axis=1)))

    def dependence_cost(self, batch):
        prob = self.adversary.forward(self.encode(batch.x))
        return _log_likelihood(prob, batch.s)[0]

    def prediction_cost(self, batch):
        if self.predictor is None:
            raise ConfigError("prediction cost needs a predictor (gamma > 0)")
        if batch.y is None:
            raise ConfigError("prediction cost needs labels")
        prob = self.predictor.forward(self.encode(batch.x))
        labelled = batch.y >= 0
        if not labelled.any():
            return 0.0
        return -_log_likelihood(prob[labelled], batch.y[labelled])[0]

    def joint_loss(self, batch):
        return self.compute(batch)[0]

    def compute(self, batch, side=None):
        """Forward pass, loss, adversary batch accuracy, and optional gradients.

        ``side`` is None, "actor" or "adversary". With a side, the gradients of
        the total loss w.r.t. that side's parameters are left in the networks'
        gradient slots (the other side's slots are zeroed) and returned.
        """
        x = batch.x
        r = self.encoder.forward(x)
        c = d = e = 0.0

        if self.decoder is not None:
            xh = self.decoder.forward(r)
            diff = (xh - x).reshape(len(x), -1)
            c = float(np.mean(np.sum(diff ** 2, axis=1)))
            dc = (2.0 * diff / len(x)).reshape(xh.shape)

        p_adv = self.adversary.forward(r)
        d, dd = _log_likelihood(p_adv, batch.s)
        adv_acc = float(np.mean((p_adv[:, 0] > 0.5) == (batch.s == 1)))

        if self.predictor is not None:
            if batch.y is None:
                raise ConfigError("gamma > 0 but the batch carries no labels")
            p_pred = self.predictor.forward(r)
            labelled = batch.y >= 0
            m = int(labelled.sum())
            de = np.zeros_like(p_pred)
            if m:
                ll, g = _log_likelihood(p_pred[labelled], batch.y[labelled])
                e = -ll
                de[labelled] = -g
        total = self.alpha * c + self.beta * d + self.gamma * e
        loss = LossBreakdown(c=c, d=d, e=e, total=total)
        if side is None:
            return loss, adv_acc, None

        for net in self.networks():
            net.zero_grad()
        if side == "adversary":
            self.adversary.backward(self.beta * dd)
            return loss, adv_acc, self.adversary_gradients()
        if side != "actor":
            raise ValueError(f"unknown side {side!r}")
        gr = np.zeros_like(r)
        if self.decoder is not None:
            gr += self.decoder.backward(self.alpha * dc)
        if self.beta > 0:
            gr += self.adversary.backward(self.beta * dd)
            self.adversary.zero_grad()
        if self.predictor is not None:
            gr += self.predictor.backward(self.gamma * de)
        self.encoder.backward(gr)
        return loss, adv_acc, self.actor_gradients()

    # -- inference --

    def predict_proba(self, x):
        if self.predictor is None:
            raise ConfigError("model has no predictor")
        return self.predictor.forward(self.encode(x))[:, 0]

    def predict(self, x):
        return (self.predict_proba(x) > 0.5).astype(np.int64)

    def adversary_proba(self, x):
        return self.adversary.forward(self.encode(x))[:, 0]

    def describe(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "encoder": self.encoder.describe(),
            "decoder": None if self.decoder is None else self.decoder.describe(),
            "predictor": None if self.predictor is None else self.predictor.describe(),
            "adversary": self.adversary.describe(),
        }

    def parameters(self):
        return [p for net in self.networks() for p in net.parameters]


def _near_kink(model, x):
    if near_relu_kink(model.encoder, x):
        return True
    r = model.encoder.forward(x)
    return any(near_relu_kink(net, r) for net in (model.decoder, model.predictor, model.adversary) if net is not None)


def joint_grad_check(model, batch, rng=None, step=1e-5, max_resample=100):
    """Worst relative error of the joint-loss gradient over every parameter.

    Analytic gradients come from one actor pass and one adversary pass;
    features near a ReLU kink are redrawn from N(0, 1) first. Returns None
    when no draw escapes the kinks (e.g. a dead layer pins every unit at 0).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x = batch.x
    for _ in range(max_resample):
        if not _near_kink(model, x):
            break
        x = rng.standard_normal(x.shape)
    else:
        return None
    batch = Batch(x, batch.s, batch.y)
    analytic = [g.copy() for g in model.compute(batch, "actor")[2]]
    analytic += [g.copy() for g in model.compute(batch, "adversary")[2]]
    params = model.actor_parameters() + model.adversary_parameters()
    return check_gradients(lambda: model.compute(batch)[0].total, params, analytic, step)


@dataclass
class ModelSpec:
    """Layer sizes and loss weights for a fairness censor model.

    The encoder is ``encoder_layers`` ReLU layers of ``hidden_units`` each; the
    last of them is the representation. The decoder mirrors it with a linear
    output, the predictor is a logistic regressor on the representation and the
    adversary has ``adversary_layers`` ReLU hidden layers.
    """

    encoder_layers: int = 1
    hidden_units: int = 16
    adversary_layers: int = 1
    adversary_units: int = None
    alpha: float = 0.05
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.encoder_layers < 1 or self.hidden_units < 1 or self.adversary_layers < 1:
            raise ConfigError("layer and unit counts must be >= 1")


def build_censor_model(n_features, spec, rng):
    h = spec.hidden_units
    layers = []
    width = n_features
    for _ in range(spec.encoder_layers):
        layers += [Affine(width, h), ReLU()]
        width = h
    encoder = Network(layers, (n_features,), rng)
    decoder = None
    if spec.alpha > 0:
        decoder = mlp([h] * spec.encoder_layers + [n_features], rng)
    predictor = mlp([h, 1], rng, output="sigmoid") if spec.gamma > 0 else None
    au = spec.adversary_units or h
    adversary = mlp([h] + [au] * spec.adversary_layers + [1], rng, output="sigmoid")
    return CensorModel(encoder, adversary, decoder, predictor, spec.alpha, spec.beta, spec.gamma)
