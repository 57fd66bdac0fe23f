"""A small dense-network engine with explicit backpropagation.

Everything works on row batches: inputs are ``(n, d)`` arrays (a 1-D vector is
treated as a batch of one). Weights are stored ``(out, in)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

ACTIVATIONS = ("relu", "sigmoid", "identity")
LOSSES = ("sparse_cce", "mse")
CHECKPOINT_VERSION = 1


@dataclass
class DenseLayer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")

    @property
    def n_in(self):
        return self.W.shape[1]

    @property
    def n_out(self):
        return self.W.shape[0]


def glorot_layer(n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> DenseLayer:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return DenseLayer(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out), activation)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return expit(z)
    return z


def _activation_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass
class ForwardCache:
    inputs: list
    pre: list
    post: list
    masks: list
    layer_ids: tuple
    squeeze: bool


def forward(stack, x, mode: str = "infer", dropout_rate: float = 0.0, rng=None):
    """Run ``x`` through the layers.

    In ``train`` mode inverted dropout (keep-scaled by ``1/(1-p)``) follows every
    layer except the last. Returns ``(output, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[1] != stack[0].n_in:
        raise ValueError(f"input has {h.shape[1]} features, first layer expects {stack[0].n_in}")
    drop = mode == "train" and dropout_rate > 0.0
    if drop and rng is None:
        raise ValueError("dropout in train mode needs an rng")
    cache = ForwardCache([], [], [], [], tuple(id(l.W) for l in stack), squeeze)
    for i, layer in enumerate(stack):
        cache.inputs.append(h)
        z = h @ layer.W.T + layer.b
        a = _activate(z, layer.activation)
        mask = None
        if drop and i < len(stack) - 1:
            mask = (rng.random(a.shape) >= dropout_rate) / (1.0 - dropout_rate)
            a_out = a * mask
        else:
            a_out = a
        if not np.all(np.isfinite(a_out)):
            raise FloatingPointError(f"non-finite activation in layer {i}")
        cache.pre.append(z)
        cache.post.append(a)
        cache.masks.append(mask)
        h = a_out
    return (h[0] if squeeze else h), cache


def backward(stack, cache: ForwardCache, output_grad):
    """Reverse-mode gradients for every layer.

    Returns ``(grads, input_grad)`` with ``grads`` a list of ``(dW, db)`` pairs.
    """
    if cache.layer_ids != tuple(id(l.W) for l in stack):
        raise ValueError("stale cache: it was produced by a different layer stack")
    g = np.asarray(output_grad, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    grads = [None] * len(stack)
    for i in range(len(stack) - 1, -1, -1):
        layer = stack[i]
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        dz = g * _activation_grad(cache.pre[i], cache.post[i], layer.activation)
        grads[i] = (dz.T @ cache.inputs[i], dz.sum(axis=0))
        g = dz @ layer.W
    return grads, (g[0] if cache.squeeze else g)


def softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(output, target, kind: str):
    """Batch-mean loss and its gradient with respect to ``output``.

    ``sparse_cce`` takes logits ``(n, K)`` and integer targets ``(n,)``;
    ``mse`` averages over every output element.
    """
    out = np.asarray(output, dtype=np.float64)
    if kind == "sparse_cce":
        squeeze = out.ndim == 1
        logits = out[None, :] if squeeze else out
        t = np.atleast_1d(np.asarray(target)).astype(np.int64)
        n, K = logits.shape
        if t.shape != (n,):
            raise ValueError("need one class index per row")
        if t.min() < 0 or t.max() >= K:
            raise ValueError(f"class index out of range for {K} classes")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.exp(shifted).sum(axis=1))
        loss = float(np.mean(log_norm - shifted[np.arange(n), t]))
        grad = softmax(logits)
        grad[np.arange(n), t] -= 1.0
        grad /= n
        return loss, (grad[0] if squeeze else grad)
    if kind == "mse":
        t = np.asarray(target, dtype=np.float64).reshape(out.shape)
        diff = out - t
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
    raise ValueError(f"unknown loss {kind!r}")


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, learning_rate: float):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        # p -= lr * (m / c1) / (sqrt(v / c2) + eps), with fewer temporaries
        denom = np.sqrt(v)
        denom *= 1.0 / math.sqrt(c2)
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= learning_rate / c1
        p -= denom
    return params, state


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 10000
    patience: int = 100
    batch_size: int | None = None
    dropout_rate: float = 0.0
    seed: int = 0
    loss: str = "sparse_cce"
    min_delta: float = 1e-6

    def __post_init__(self):
        if not 1e-6 <= self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in [1e-6, 1]")
        if not 0.0 <= self.dropout_rate <= 0.5:
            raise ValueError("dropout_rate must lie in [0, 0.5]")
        if self.max_epochs < 1 or self.patience < 0 or self.patience > self.max_epochs:
            raise ValueError("need max_epochs >= 1 and 0 <= patience <= max_epochs")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stopped_epoch: int = 0


def train_loop(params, loss_grad, val_loss, train, val, config: TrainConfig):
    """Adam training with early stopping on validation loss.

    Args:
        params: list of parameter arrays, updated in place.
        loss_grad: ``loss_grad(X, y, rng) -> (loss, grads)`` for a training batch.
        val_loss: ``val_loss(X, y) -> loss`` in inference mode.
        train, val: ``(X, y)`` pairs.
        config: optimisation settings.

    Returns:
        ``(best_params, history)``. ``params`` is also reset to the best epoch.
    """
    X, y = train
    Xv, yv = val
    if len(X) == 0 or len(Xv) == 0:
        raise ValueError("train and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    shuffle_rng, dropout_rng = rng.spawn(2)
    state = AdamState.zeros_like(params)
    hist = History()
    best = [p.copy() for p in params]
    n = len(X)
    bs = n if config.batch_size is None else min(config.batch_size, n)
    wait = 0
    for epoch in range(config.max_epochs):
        if bs < n:
            order = shuffle_rng.permutation(n)
            batches = [order[i:i + bs] for i in range(0, n, bs)]
        else:
            batches = [slice(None)]
        epoch_loss = 0.0
        for idx in batches:
            loss, grads = loss_grad(X[idx], y[idx], dropout_rng)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
            adam_step(params, grads, state, config.learning_rate)
            epoch_loss += loss * (len(X[idx]) / n)
        v = val_loss(Xv, yv)
        if not np.isfinite(v):
            raise FloatingPointError(f"non-finite validation loss at epoch {epoch}")
        hist.train_loss.append(float(epoch_loss))
        hist.val_loss.append(float(v))
        hist.stopped_epoch = epoch
        if v < hist.best_val_loss - config.min_delta:
            hist.best_val_loss = float(v)
            hist.best_epoch = epoch
            best = [p.copy() for p in params]
            wait = 0
        else:
            wait += 1
            if wait > config.patience:
                break
    for p, b in zip(params, best):
        p[...] = b
    return best, hist


def encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def decode_array(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def write_checkpoint(path, kind: str, arrays: dict, config: dict, extra: dict | None = None):
    """Write named parameter arrays plus a config echo as JSON.

    Floats are written with full repr, so a reload is bit-exact.
    """
    doc = {"format_version": CHECKPOINT_VERSION, "kind": kind, "config": config,
           "arrays": {k: encode_array(v) for k, v in arrays.items()}}
    if extra:
        doc.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


def read_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('format_version')}")
    doc["arrays"] = {k: decode_array(v) for k, v in doc["arrays"].items()}
    return doc
