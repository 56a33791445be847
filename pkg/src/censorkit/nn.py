"""
Small differentiable-network engine on numpy float64 arrays.

Every array is batch-first: a network declared with ``input_shape=(C, H, W)``
consumes ``(n, C, H, W)``. Layers cache what they need during ``forward`` and
consume that cache in ``backward``, which accumulates into ``grads`` and
returns the gradient with respect to the layer input.
"""

import struct

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StaleCacheError, TrainingDiverged

DTYPE = np.float64


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE)


def sigmoid(z):
    # tanh form does not overflow for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Layer:
    """Base layer. Subclasses set ``kind`` and override the hooks."""

    kind = None

    def __init__(self):
        self.params = []
        self.grads = []
        self._cache = None

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def initialize(self, in_shape, rng):
        pass

    def forward(self, x):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StaleCacheError(f"{self.kind}: backward called without a preceding forward")
        cache, self._cache = self._cache, None
        return cache

    def hyper(self):
        return {}


class Affine(Layer):
    """Dense layer ``y = W x + b`` with ``W`` of shape (out, in).

    Inputs with more than one trailing axis are flattened, so an Affine layer
    can sit directly after a convolution stack.
    """

    kind = "affine"

    def __init__(self, n_in, n_out):
        super().__init__()
        self.n_in = int(n_in)
        self.n_out = int(n_out)
        self.params = [np.zeros((self.n_out, self.n_in), DTYPE), np.zeros(self.n_out, DTYPE)]
        self.grads = [np.zeros_like(p) for p in self.params]

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.n_in:
            raise ShapeError(f"affine expects {self.n_in} inputs, got shape {tuple(in_shape)}")
        return (self.n_out,)

    def initialize(self, in_shape, rng):
        self.params[0][...] = glorot_uniform(rng, self.params[0].shape, self.n_in, self.n_out)
        self.params[1][...] = 0.0

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        self._cache = (flat, x.shape)
        return flat @ self.params[0].T + self.params[1]

    def backward(self, g):
        flat, shape = self._take_cache()
        self.grads[0] += g.T @ flat
        self.grads[1] += g.sum(axis=0)
        return (g @ self.params[0]).reshape(shape)

    def hyper(self):
        return {"n_in": self.n_in, "n_out": self.n_out}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, g):
        # subgradient at exactly 0 is 0
        return np.where(self._take_cache(), g, 0.0)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        out = sigmoid(x)
        self._cache = out
        return out

    def backward(self, g):
        out = self._take_cache()
        return g * out * (1.0 - out)


class Conv2d(Layer):
    """Valid (unpadded), stride-1 2-D convolution over (C, H, W) inputs."""

    kind = "conv2d"

    def __init__(self, in_channels, filters, kernel):
        super().__init__()
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.kernel = int(kernel)
        k = self.kernel
        self.params = [np.zeros((self.filters, self.in_channels, k, k), DTYPE), np.zeros(self.filters, DTYPE)]
        self.grads = [np.zeros_like(p) for p in self.params]

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"conv2d expects ({self.in_channels}, H, W), got {tuple(in_shape)}")
        c, h, w = in_shape
        if self.kernel > h or self.kernel > w:
            raise ShapeError(f"kernel {self.kernel} larger than image {h}x{w}")
        return (self.filters, h - self.kernel + 1, w - self.kernel + 1)

    def initialize(self, in_shape, rng):
        k2 = self.kernel * self.kernel
        self.params[0][...] = glorot_uniform(
            rng, self.params[0].shape, self.in_channels * k2, self.filters * k2
        )
        self.params[1][...] = 0.0

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"conv2d expects (n, C, H, W), got {x.shape}")
        self.output_shape(x.shape[1:])
        # (n, C, H', W', k, k)
        windows = sliding_window_view(x, (self.kernel, self.kernel), axis=(2, 3))
        self._cache = (windows, x.shape)
        out = np.einsum("nchwij,fcij->nfhw", windows, self.params[0], optimize=True)
        return out + self.params[1][None, :, None, None]

    def backward(self, g):
        windows, shape = self._take_cache()
        w = self.params[0]
        self.grads[0] += np.einsum("nchwij,nfhw->fcij", windows, g, optimize=True)
        self.grads[1] += g.sum(axis=(0, 2, 3))
        dx = np.zeros(shape, DTYPE)
        ho, wo = g.shape[2], g.shape[3]
        for i in range(self.kernel):
            for j in range(self.kernel):
                dx[:, :, i:i + ho, j:j + wo] += np.einsum("nfhw,fc->nchw", g, w[:, :, i, j], optimize=True)
        return dx

    def hyper(self):
        return {"in_channels": self.in_channels, "filters": self.filters, "kernel": self.kernel}


class MaxPool2d(Layer):
    """Non-overlapping max pooling; extents must divide evenly."""

    kind = "maxpool"

    def __init__(self, pool):
        super().__init__()
        self.pool = int(pool)

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool expects (C, H, W), got {tuple(in_shape)}")
        c, h, w = in_shape
        p = self.pool
        if h % p or w % p:
            raise ShapeError(f"maxpool size {p} does not divide {h}x{w}")
        return (c, h // p, w // p)

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"maxpool expects (n, C, H, W), got {x.shape}")
        self.output_shape(x.shape[1:])
        n, c, h, w = x.shape
        p = self.pool
        blocks = x.reshape(n, c, h // p, p, w // p, p).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, h // p, w // p, p * p)
        arg = blocks.argmax(axis=-1)
        self._cache = (arg, x.shape)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, g):
        arg, shape = self._take_cache()
        n, c, h, w = shape
        p = self.pool
        routed = np.zeros((n, c, h // p, w // p, p * p), DTYPE)
        np.put_along_axis(routed, arg[..., None], g[..., None], axis=-1)
        routed = routed.reshape(n, c, h // p, w // p, p, p).transpose(0, 1, 2, 4, 3, 5)
        return routed.reshape(shape)

    def hyper(self):
        return {"pool": self.pool}


class Network:
    """An ordered stack of layers with a fixed per-sample input shape."""

    def __init__(self, layers, input_shape, rng=None):
        self.layers = list(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        shape = self.input_shape
        if rng is None:
            rng = np.random.default_rng(0)
        for layer in self.layers:
            out = layer.output_shape(shape)
            layer.initialize(shape, rng)
            shape = out
        self.output_shape = shape

    @property
    def parameters(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def gradients(self):
        return [g for layer in self.layers for g in layer.grads]

    @property
    def parameter_count(self):
        return int(sum(p.size for p in self.parameters))

    def zero_grad(self):
        for g in self.gradients:
            g[...] = 0.0

    def forward(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"network expects (n, {self.input_shape}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, g):
        g = np.asarray(g, dtype=DTYPE)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def describe(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [{"kind": layer.kind, **layer.hyper()} for layer in self.layers],
        }

    def save(self, path):
        save_tensors(path, self.parameters)

    def load(self, path):
        tensors = load_tensors(path)
        params = self.parameters
        if len(tensors) != len(params) or any(t.shape != p.shape for t, p in zip(tensors, params)):
            raise ShapeError(f"{path}: stored tensors do not match this network")
        for p, t in zip(params, tensors):
            p[...] = t


def mlp(sizes, rng, hidden="relu", output=None):
    """Dense stack ``sizes[0] -> ... -> sizes[-1]``.

    ``hidden`` activation between affine layers; ``output`` is None or
    "sigmoid".
    """
    act = {"relu": ReLU, "sigmoid": Sigmoid}
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(Affine(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(act[hidden]())
    if output is not None:
        layers.append(act[output]())
    return Network(layers, (sizes[0],), rng)


# -- optimizers ---------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a fixed list of parameter arrays (updated in place).

    ``direction`` is -1 for descent and +1 for ascent.
    """

    def __init__(self, params, learning_rate=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.first_moment = [np.zeros_like(p) for p in self.params]
        self.second_moment = [np.zeros_like(p) for p in self.params]

    def step(self, grads, direction=-1):
        if direction not in (-1, 1):
            raise ValueError("direction must be +1 (ascent) or -1 (descent)")
        if len(grads) != len(self.params):
            raise ShapeError("gradient list does not match parameter list")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged("non-finite gradient passed to Adam")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(self.params, grads, self.first_moment, self.second_moment):
            if g.shape != p.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p += direction * self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


class SGD:
    def __init__(self, params, learning_rate=1e-2):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self, grads, direction=-1):
        if direction not in (-1, 1):
            raise ValueError("direction must be +1 (ascent) or -1 (descent)")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged("non-finite gradient passed to SGD")
        self.step_count += 1
        for p, g in zip(self.params, grads):
            p += direction * self.learning_rate * g


# -- losses -------------------------------------------------------------------

PROB_CLAMP = 1e-7


def squared_error(pred, target):
    """Batch mean of the per-row summed squared error, with its gradient."""
    diff = pred - target
    n = pred.shape[0]
    loss = float(np.sum(diff.reshape(n, -1) ** 2) / n)
    return loss, 2.0 * diff / n


def log_loss(prob, target, mask=None):
    """Mean binary log-loss on clamped probabilities, with its gradient.

    ``mask`` selects the rows that count (unlabelled rows are skipped).
    """
    prob = prob.reshape(prob.shape[0], -1)[:, 0]
    target = np.asarray(target, dtype=DTYPE)
    if mask is None:
        mask = np.ones(prob.shape[0], bool)
    m = int(mask.sum())
    grad = np.zeros((prob.shape[0], 1), DTYPE)
    if m == 0:
        return 0.0, grad
    pc = np.clip(prob, PROB_CLAMP, 1.0 - PROB_CLAMP)
    t = np.where(mask, target, 0.0)
    ll = t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc)
    loss = -float(ll[mask].sum() / m)
    inside = (prob > PROB_CLAMP) & (prob < 1.0 - PROB_CLAMP)
    dp = -(t / pc - (1.0 - t) / (1.0 - pc)) / m
    grad[:, 0] = np.where(mask & inside, dp, 0.0)
    return loss, grad


LOSSES = {"squared_error": squared_error, "log_loss": log_loss}


# -- gradient checking ----------------------------------------------------------


def relative_error(analytic, numeric):
    denom = max(abs(analytic), abs(numeric), 1e-8)
    return abs(analytic - numeric) / denom


def check_gradients(loss_fn, params, analytic, step=1e-5):
    """Worst relative error between ``analytic`` and central differences of ``loss_fn``.

    ``loss_fn()`` must re-evaluate the loss from the current contents of
    ``params``; each entry is perturbed in place and restored.
    """
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.reshape(-1)
        ga = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            worst = max(worst, relative_error(ga[i], (up - down) / (2.0 * step)))
    return worst


def near_relu_kink(net, x, tol=1e-4):
    """True if any pre-activation feeding a ReLU lies within ``tol`` of 0."""
    h = np.asarray(x, DTYPE)
    try:
        for layer in net.layers:
            if isinstance(layer, ReLU) and np.any(np.abs(h) < tol):
                return True
            h = layer.forward(h)
        return False
    finally:
        for layer in net.layers:
            layer._cache = None


def grad_check(net, loss, x, target, rng=None, step=1e-5, max_resample=100):
    """Compare backprop against central differences for every parameter.

    ``loss`` is "squared_error" or "log_loss". Inputs that put a ReLU
    pre-activation within 1e-4 of its kink are redrawn from N(0, 1) (at most
    ``max_resample`` times) because finite differences are meaningless there;
    if no draw escapes, the network is excluded and None is returned.
    """
    loss_fn = LOSSES[loss]
    x = np.asarray(x, DTYPE)
    rng = rng if rng is not None else np.random.default_rng(0)
    for _ in range(max_resample):
        if not near_relu_kink(net, x):
            break
        x = rng.standard_normal(x.shape)
    else:
        return None

    def value():
        return loss_fn(net.forward(x), target)[0]

    net.zero_grad()
    _, g = loss_fn(net.forward(x), target)
    net.backward(g)
    analytic = [g.copy() for g in net.gradients]
    return check_gradients(value, net.parameters, analytic, step)


# -- parameter files --------------------------------------------------------------

MAGIC = b"CKNN1"


def save_tensors(path, tensors):
    """Write tensors as: magic, then per tensor u32 rank, u32 extents, f64 payload (all LE)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for t in tensors:
            t = np.asarray(t, dtype="<f8", order="C")
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(t.tobytes())


def load_tensors(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MAGIC)] != MAGIC:
        raise ShapeError(f"{path}: not a CKNN1 parameter file")
    pos = len(MAGIC)
    tensors = []
    while pos < len(data):
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        tensors.append(arr.astype(DTYPE))
    return tensors
