"""
Expert patch anonymizer.

Images are cut into 5x5 patches. A frozen, weakly supervised patch classifier
gates each patch: below the threshold the patch is copied verbatim, above it
the patch is replaced by the output of a patch autoencoder. The autoencoder is
trained against a convolutional adversary that looks at the whole
reassembled image and tries to tell whether the source carried text.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError, TrainingDiverged
from .model import LossBreakdown, _log_likelihood
from .nn import DTYPE, Adam, Affine, Conv2d, MaxPool2d, Network, ReLU, Sigmoid, log_loss, mlp
from .trainer import TrainConfig, train

PATCH = 5


# -- patch grids ---------------------------------------------------------------


@dataclass
class PatchGrid:
    """Row-major non-overlapping tiling of one image."""

    patches: np.ndarray  # (count, patch_size**2)
    image_shape: tuple
    patch_size: int = PATCH
    stride: int = PATCH

    @property
    def origins(self):
        h, w = self.image_shape
        return [(r, c) for r in range(0, h, self.stride) for c in range(0, w, self.stride)]

    def __len__(self):
        return len(self.patches)


def _check_tiling(shape, patch_size, stride):
    if stride != patch_size:
        raise ConfigError("only non-overlapping tilings (stride == patch_size) are supported")
    h, w = shape[-2:]
    if h % stride or w % stride:
        raise ShapeError(f"image {h}x{w} is not divisible into {patch_size}x{patch_size} patches")


def to_patches(images, patch_size=PATCH):
    """(n, H, W) -> (n, H/p * W/p, p*p), row-major over the patch grid."""
    n, h, w = images.shape
    _check_tiling(images.shape, patch_size, patch_size)
    p = patch_size
    t = images.reshape(n, h // p, p, w // p, p).transpose(0, 1, 3, 2, 4)
    return t.reshape(n, (h // p) * (w // p), p * p)


def from_patches(patches, image_shape, patch_size=PATCH):
    """Inverse of ``to_patches``."""
    h, w = image_shape
    p = patch_size
    n = patches.shape[0]
    t = patches.reshape(n, h // p, w // p, p, p).transpose(0, 1, 3, 2, 4)
    return t.reshape(n, h, w)


def extract_patches(image, patch_size=PATCH, stride=PATCH):
    image = np.asarray(image, dtype=DTYPE)
    if image.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {image.shape}")
    _check_tiling(image.shape, patch_size, stride)
    return PatchGrid(to_patches(image[None], patch_size)[0], image.shape, patch_size, stride)


def reassemble(grid, patches=None):
    patches = grid.patches if patches is None else patches
    return from_patches(patches[None], grid.image_shape, grid.patch_size)[0]


def padded_shape(shape, patch_size=PATCH):
    h, w = shape
    return (-(-h // patch_size) * patch_size, -(-w // patch_size) * patch_size)


def pad_images(images, patch_size=PATCH):
    """Edge-replicate the bottom/right borders up to a multiple of the patch size."""
    h, w = images.shape[-2:]
    ph, pw = padded_shape((h, w), patch_size)
    if (ph, pw) == (h, w):
        return images
    return np.pad(images, ((0, 0), (0, ph - h), (0, pw - w)), mode="edge")


def weak_labels(s, patches_per_image):
    """Every patch inherits its image's label."""
    return np.repeat(np.asarray(s, dtype=np.int64), patches_per_image)


def weak_patch_labels(corpus, patch_size=PATCH):
    """(patches, labels) for the training images of an ImageCorpus."""
    if len(corpus.train) == 0:
        return np.zeros((0, patch_size * patch_size)), np.zeros(0, np.int64)
    p = to_patches(pad_images(corpus.train, patch_size), patch_size)
    return p.reshape(-1, p.shape[-1]), weak_labels(corpus.train_s, p.shape[1])


def stamp_patch_mask(image_shape, bbox, patch_size=PATCH):
    """Boolean per-patch mask of patches intersecting a (top, left, h, w) box."""
    gh, gw = (v // patch_size for v in padded_shape(image_shape, patch_size))
    top, left, bh, bw = bbox
    rows = np.arange(gh) * patch_size
    cols = np.arange(gw) * patch_size
    r_hit = (rows < top + bh) & (rows + patch_size > top)
    c_hit = (cols < left + bw) & (cols + patch_size > left)
    return (r_hit[:, None] & c_hit[None, :]).ravel()


# -- the expert model ---------------------------------------------------------------


@dataclass
class ExpertSpec:
    patch_size: int = PATCH
    classifier_hidden: int = 64
    autoencoder_hidden: int = 256
    gate_threshold: float = 0.7
    adversary_filters: int = 10
    adversary_pool: int = 2
    adversary_dense: int = 64

    def __post_init__(self):
        if not 0.0 <= self.gate_threshold <= 1.0:
            raise ConfigError("gate_threshold must lie in [0, 1]")


def _second_kernel(h, w):
    # kernel for the second convolution that keeps both extents poolable
    for k in (3, 4, 2, 5):
        if k <= min(h, w) and (h - k + 1) % 2 == 0 and (w - k + 1) % 2 == 0:
            return k
    raise ConfigError(f"no small kernel makes a {h}x{w} feature map poolable")


def image_adversary(image_shape, rng, filters=10, pool=2, dense=64):
    """conv3 -> relu -> pool -> conv -> relu -> pool -> dense -> relu -> dense -> sigmoid."""
    h, w = image_shape
    if (h - 2) % pool or (w - 2) % pool:
        raise ConfigError(f"image {h}x{w} is not poolable after the first 3x3 convolution")
    h1, w1 = (h - 2) // pool, (w - 2) // pool
    k2 = _second_kernel(h1, w1) if pool == 2 else 3
    h2, w2 = (h1 - k2 + 1) // pool, (w1 - k2 + 1) // pool
    layers = [
        Conv2d(1, filters, 3), ReLU(), MaxPool2d(pool),
        Conv2d(filters, filters, k2), ReLU(), MaxPool2d(pool),
        Affine(filters * h2 * w2, dense), ReLU(), Affine(dense, 1), Sigmoid(),
    ]
    return Network(layers, (1, h, w), rng)


class ExpertModel:
    def __init__(self, classifier, autoencoder, adversary, image_shape, patch_size=PATCH, gate_threshold=0.7):
        if not 0.0 <= gate_threshold <= 1.0:
            raise ConfigError("gate_threshold must lie in [0, 1]")
        d = patch_size * patch_size
        if classifier.input_shape != (d,) or autoencoder.input_shape != (d,) or autoencoder.output_shape != (d,):
            raise ShapeError("classifier and autoencoder must both consume flattened patches")
        if adversary.input_shape != (1, *image_shape):
            raise ShapeError(f"adversary expects {adversary.input_shape}, images are {image_shape}")
        self.classifier = classifier
        self.autoencoder = autoencoder
        self.adversary = adversary
        self.image_shape = tuple(image_shape)
        self.patch_size = patch_size
        self.gate_threshold = float(gate_threshold)

    @property
    def grid_shape(self):
        return padded_shape(self.image_shape, self.patch_size)

    def patches(self, images):
        return to_patches(pad_images(np.asarray(images, dtype=DTYPE), self.patch_size), self.patch_size)

    def text_probability(self, images):
        """(n, count) classifier probabilities per patch."""
        p = self.patches(images)
        n, k, d = p.shape
        return self.classifier.forward(p.reshape(n * k, d))[:, 0].reshape(n, k)

    def gates(self, images):
        return self.text_probability(images) > self.gate_threshold

    def assemble(self, patches):
        h, w = self.image_shape
        return from_patches(patches, self.grid_shape, self.patch_size)[:, :h, :w]

    def reconstruct(self, images, gates=None):
        images = np.asarray(images, dtype=DTYPE)
        p = self.patches(images)
        g = self.gates(images) if gates is None else gates
        out = p.copy()
        if g.any():
            out[g] = self.autoencoder.forward(p[g])
        return self.assemble(out)

    def adversary_proba(self, images):
        images = np.asarray(images, dtype=DTYPE)
        return self.adversary.forward(images[:, None])[:, 0]

    def describe(self):
        return {
            "image_shape": list(self.image_shape),
            "patch_size": self.patch_size,
            "gate_threshold": self.gate_threshold,
            "classifier": self.classifier.describe(),
            "autoencoder": self.autoencoder.describe(),
            "adversary": self.adversary.describe(),
        }


def build_expert_model(image_shape, spec, rng):
    d = spec.patch_size * spec.patch_size
    classifier = mlp([d, spec.classifier_hidden, 1], rng, output="sigmoid")
    autoencoder = mlp([d, spec.autoencoder_hidden, d], rng, output="sigmoid")
    adversary = image_adversary(image_shape, rng, spec.adversary_filters, spec.adversary_pool, spec.adversary_dense)
    return ExpertModel(classifier, autoencoder, adversary, image_shape, spec.patch_size, spec.gate_threshold)


def expert_reconstruct(model, image):
    """Censor one image (H, W) or a stack (n, H, W)."""
    image = np.asarray(image, dtype=DTYPE)
    if image.ndim == 2:
        return model.reconstruct(image[None])[0]
    return model.reconstruct(image)


# -- classifier pretraining ----------------------------------------------------------


def pretrain_patch_classifier(model, corpus, config):
    """Log-loss descent on weakly labelled training patches; returns the loss trace."""
    x, y = weak_patch_labels(corpus, model.patch_size)
    if len(x) == 0:
        raise ConfigError("cannot pretrain on an empty corpus")
    net = model.classifier
    opt = Adam(net.parameters, learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    losses = []
    order, pos = None, len(x)
    for _ in range(config.max_steps):
        if pos >= len(x):
            order, pos = rng.permutation(len(x)), 0
        idx = order[pos:pos + config.batch_size]
        pos += config.batch_size
        net.zero_grad()
        loss, g = log_loss(net.forward(x[idx]), y[idx])
        if not math.isfinite(loss):
            raise TrainingDiverged(f"patch classifier loss became {loss}", trace=losses)
        net.backward(g)
        opt.step(net.gradients, direction=-1)
        losses.append(loss)
    return losses


# -- adversarial training ------------------------------------------------------------


@dataclass
class ImageBatch:
    x: np.ndarray
    s: np.ndarray
    gates: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass
class GatedImages:
    """Training images with gates precomputed by the (frozen) classifier."""

    x: np.ndarray
    s: np.ndarray
    gates: np.ndarray

    def __len__(self):
        return len(self.x)

    def batch(self, idx):
        return ImageBatch(self.x[idx], self.s[idx], self.gates[idx])


class AnonymizerObjective:
    """``alpha * C + beta * D`` with the autoencoder as actor.

    C is the pixel MSE of the autoencoder on gated patches and D the
    adversary's mean log-likelihood of ``s`` on the reassembled images.
    """

    def __init__(self, model, alpha=1.0, beta=10.0):
        if alpha < 0 or beta < 0:
            raise ConfigError("loss weights must be non-negative")
        self.model = model
        self.alpha = float(alpha)
        self.beta = float(beta)

    def actor_parameters(self):
        return self.model.autoencoder.parameters

    def adversary_parameters(self):
        return self.model.adversary.parameters

    def compute(self, batch, side=None):
        m = self.model
        ae, adv = m.autoencoder, m.adversary
        p = m.patches(batch.x)
        g = batch.gates
        src = p[g]
        out = p.copy()
        c = 0.0
        if len(src):
            rec = ae.forward(src)
            diff = rec - src
            c = float(np.mean(diff ** 2))
            out[g] = rec
        images = m.assemble(out)
        prob = adv.forward(images[:, None])
        d, dd = _log_likelihood(prob, batch.s)
        acc = float(np.mean((prob[:, 0] > 0.5) == (batch.s == 1)))
        loss = LossBreakdown(c=c, d=d, e=0.0, total=self.alpha * c + self.beta * d)
        if side is None:
            return loss, acc, None
        ae.zero_grad()
        adv.zero_grad()
        if side == "adversary":
            adv.backward(self.beta * dd)
            return loss, acc, adv.gradients
        if side != "actor":
            raise ValueError(f"unknown side {side!r}")
        if len(src):
            gimg = adv.backward(self.beta * dd)[:, 0]
            adv.zero_grad()
            full = np.zeros((len(images), *m.grid_shape))
            h, w = m.image_shape
            full[:, :h, :w] = gimg
            grec = to_patches(full, m.patch_size)[g]
            grec += self.alpha * 2.0 * diff / diff.size
            ae.backward(grec)
        return loss, acc, ae.gradients


def gated_training_set(model, corpus):
    return GatedImages(corpus.train, corpus.train_s, model.gates(corpus.train))


def train_anonymizer(model, corpus, alpha=1.0, beta=10.0, config=None):
    """Alternating minimax of autoencoder vs image adversary; returns the trace."""
    config = config or TrainConfig()
    return train(AnonymizerObjective(model, alpha, beta), gated_training_set(model, corpus), config)


def train_image_adversary(adversary, images, s, config):
    """Fit an adversary alone (log-likelihood ascent) on fixed images."""
    images = np.asarray(images, dtype=DTYPE)
    s = np.asarray(s, dtype=np.int64)
    opt = Adam(adversary.parameters, learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    order, pos = None, len(images)
    for _ in range(config.max_steps):
        if pos >= len(images):
            order, pos = rng.permutation(len(images)), 0
        idx = order[pos:pos + config.batch_size]
        pos += config.batch_size
        adversary.zero_grad()
        _, dd = _log_likelihood(adversary.forward(images[idx][:, None]), s[idx])
        adversary.backward(dd)
        opt.step(adversary.gradients, direction=+1)
    return adversary


# -- evaluation ---------------------------------------------------------------


def evaluate_pairs(model, paired):
    """(mse_censored, mse_identity) averaged over paired items."""
    if len(paired.with_text) != len(paired.without_text):
        raise ShapeError("paired set has unmatched items")
    if len(paired) == 0:
        raise ConfigError("no paired items to evaluate")
    out = expert_reconstruct(model, paired.with_text)
    target = paired.without_text
    mse_c = float(np.mean((out - target) ** 2))
    mse_i = float(np.mean((paired.with_text - target) ** 2))
    return mse_c, mse_i


def passthrough_rate(model, paired):
    """Fraction of patches away from the stamp whose pixels come out bit-identical."""
    out = expert_reconstruct(model, paired.with_text)
    po = model.patches(out)
    pi = model.patches(paired.with_text)
    same = np.all(po == pi, axis=2)
    kept = total = 0
    for i, box in enumerate(paired.bboxes):
        away = ~stamp_patch_mask(model.image_shape, box, model.patch_size)
        kept += int(same[i][away].sum())
        total += int(away.sum())
    return kept / total if total else 1.0


def adversary_accuracy(prob, s):
    return float(np.mean((np.asarray(prob) > 0.5) == (np.asarray(s) == 1)))


def paired_images(paired):
    """Stack a paired set as (images, s): texted items s=1, clean ones s=0."""
    x = np.concatenate([paired.with_text, paired.without_text])
    s = np.concatenate([np.ones(len(paired), np.int64), np.zeros(len(paired), np.int64)])
    return x, s


@dataclass
class ImageEvaluation:
    mse_censored: float
    mse_identity: float
    adversary_acc_raw: float
    adversary_acc_censored: float
    passthrough: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "mse_censored": self.mse_censored,
            "mse_identity": self.mse_identity,
            "adversary_acc_raw": self.adversary_acc_raw,
            "adversary_acc_censored": self.adversary_acc_censored,
            "passthrough": self.passthrough,
            **self.extra,
        }


def evaluate(model, paired):
    """Headline numbers on a paired test set using the model's own adversary."""
    mse_c, mse_i = evaluate_pairs(model, paired)
    x, s = paired_images(paired)
    raw = adversary_accuracy(model.adversary_proba(x), s)
    cens = adversary_accuracy(model.adversary_proba(expert_reconstruct(model, x)), s)
    return ImageEvaluation(mse_c, mse_i, raw, cens, passthrough_rate(model, paired))
