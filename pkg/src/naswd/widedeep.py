"""Wide-deep spectral model: a linear branch and a dense stack, jointly trained.

The combined output is ``a_w * (W x + b) + a_d * deep(x)`` where ``a_w`` and
``a_d`` are trainable scalars. The deep-only MLP baseline is the same class
with the wide branch and combiner switched off.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .hsi_io import HyperCube
from .preproc import SpectraTable, ZScoreStats, normalize

TASKS = {"classify3": 3, "regress1": 1}
FORCE_CLAMP = (0.0, 40.0)


@dataclass(frozen=True)
class ArchSpec:
    activation: str = "relu"
    units: int = 64
    n_layers: int = 1
    dropout: float = 0.0
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.activation not in ("relu", "sigmoid"):
            raise ValueError(f"activation must be relu or sigmoid, got {self.activation!r}")
        if not 32 <= self.units <= 512:
            raise ValueError(f"units {self.units} outside [32, 512]")
        if not 1 <= self.n_layers <= 3:
            raise ValueError(f"n_layers {self.n_layers} outside [1, 3]")
        if not 0.0 <= self.dropout <= 0.5:
            raise ValueError(f"dropout {self.dropout} outside [0, 0.5]")
        if not 1e-4 <= self.learning_rate <= 1e-2:
            raise ValueError(f"learning_rate {self.learning_rate} outside [1e-4, 1e-2]")

    def to_dict(self):
        return asdict(self)


@dataclass
class WideDeepModel:
    """Parameters and settings of one wide-deep (or deep-only) model."""

    task: str
    deep: list
    wide: nn.DenseLayer | None = None
    a_w: np.ndarray = field(default_factory=lambda: np.ones(1))
    a_d: np.ndarray = field(default_factory=lambda: np.ones(1))
    dropout_rate: float = 0.0
    normalization: str = "snv"
    zstats: ZScoreStats | None = None
    y_mean: float = 0.0
    y_sd: float = 1.0
    arch: dict | None = None

    @property
    def use_wide(self) -> bool:
        return self.wide is not None

    @property
    def input_dim(self) -> int:
        return self.deep[0].n_in

    @property
    def n_outputs(self) -> int:
        return TASKS[self.task]

    def params(self) -> list:
        """Parameter arrays in a fixed order: wide, deep layers, combiner."""
        out = []
        if self.use_wide:
            out += [self.wide.W, self.wide.b]
        for layer in self.deep:
            out += [layer.W, layer.b]
        if self.use_wide:
            out += [self.a_w, self.a_d]
        return out

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params()))

    def prepare(self, X) -> np.ndarray:
        """Normalize raw spectra the way the model expects its inputs."""
        return normalize(X, self.normalization, self.zstats)

    def branches(self, Xn, mode="infer", rng=None):
        deep_out, deep_cache = nn.forward(self.deep, Xn, mode, self.dropout_rate, rng)
        if not self.use_wide:
            return None, None, deep_out, deep_cache
        wide_out, wide_cache = nn.forward([self.wide], Xn)
        return wide_out, wide_cache, deep_out, deep_cache

    def combine(self, wide_out, deep_out):
        if wide_out is None:
            return deep_out
        return self.a_w[0] * wide_out + self.a_d[0] * deep_out

    def loss_grad(self, Xn, y, rng=None, mode="train"):
        """Loss on a normalized batch and gradients aligned with ``params()``."""
        wide_out, wide_cache, deep_out, deep_cache = self.branches(Xn, mode, rng)
        out = self.combine(wide_out, deep_out)
        kind = "sparse_cce" if self.task == "classify3" else "mse"
        target = y if kind == "sparse_cce" else np.asarray(y, dtype=np.float64).reshape(out.shape)
        loss, g = nn.loss_and_grad(out, target, kind)
        if not self.use_wide:
            deep_grads, _ = nn.backward(self.deep, deep_cache, g)
            return loss, [a for pair in deep_grads for a in pair]
        (dW, db), = nn.backward([self.wide], wide_cache, g * self.a_w[0])[0]
        deep_grads, _ = nn.backward(self.deep, deep_cache, g * self.a_d[0])
        grads = [dW, db] + [a for pair in deep_grads for a in pair]
        grads += [np.array([np.sum(g * wide_out)]), np.array([np.sum(g * deep_out)])]
        return loss, grads

    def loss(self, Xn, y) -> float:
        out = predict_logits(self, Xn)
        kind = "sparse_cce" if self.task == "classify3" else "mse"
        target = y if kind == "sparse_cce" else np.asarray(y, dtype=np.float64).reshape(out.shape)
        return nn.loss_and_grad(out, target, kind)[0]

    def copy(self) -> "WideDeepModel":
        dup = lambda l: nn.DenseLayer(l.W.copy(), l.b.copy(), l.activation)  # noqa: E731
        return replace(self, deep=[dup(l) for l in self.deep],
                       wide=dup(self.wide) if self.use_wide else None,
                       a_w=self.a_w.copy(), a_d=self.a_d.copy())


def init_model(input_dim: int, task: str, hidden, activation: str = "relu",
               dropout_rate: float = 0.0, seed: int = 0, use_wide: bool = True,
               normalization: str = "snv") -> WideDeepModel:
    """Glorot-initialised model with arbitrary hidden widths (no range checks)."""
    if input_dim <= 0:
        raise ValueError("input_dim must be positive")
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    K = TASKS[task]
    rng = np.random.default_rng(seed)
    wide = nn.glorot_layer(input_dim, K, "identity", rng) if use_wide else None
    deep, n_in = [], input_dim
    for width in hidden:
        deep.append(nn.glorot_layer(n_in, width, activation, rng))
        n_in = width
    deep.append(nn.glorot_layer(n_in, K, "identity", rng))
    return WideDeepModel(task, deep, wide, dropout_rate=dropout_rate, normalization=normalization)


def build(spec: ArchSpec, input_dim: int, task: str, seed: int = 0, use_wide: bool = True,
          normalization: str = "snv") -> WideDeepModel:
    """Model for an architecture spec: ``n_layers`` hidden layers of ``units`` plus a linear head."""
    if not isinstance(spec, ArchSpec):
        spec = ArchSpec(**spec)
    model = init_model(input_dim, task, [spec.units] * spec.n_layers, spec.activation,
                       spec.dropout, seed, use_wide, normalization)
    model.arch = spec.to_dict()
    return model


def predict_logits(model: WideDeepModel, x) -> np.ndarray:
    """Combined branch output for normalized input(s); no softmax applied."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"input has {x.shape[-1]} features, model expects {model.input_dim}")
    wide_out, _, deep_out, _ = model.branches(x)
    return model.combine(wide_out, deep_out)


def predict_proba(model: WideDeepModel, X) -> np.ndarray:
    if model.task != "classify3":
        raise ValueError("class probabilities need a classify3 model")
    return nn.softmax(predict_logits(model, model.prepare(X)))


def predict(model: WideDeepModel, X) -> np.ndarray:
    """Class indices (classify3) or forces in N (regress1) for raw spectra."""
    out = predict_logits(model, model.prepare(X))
    if model.task == "classify3":
        return np.argmax(out, axis=-1)
    return out[..., 0] * model.y_sd + model.y_mean


def train_config(spec: ArchSpec, task: str, **overrides) -> nn.TrainConfig:
    """TrainConfig carrying the ArchSpec's learning rate and dropout and the task's loss."""
    kw = dict(learning_rate=spec.learning_rate, dropout_rate=spec.dropout,
              loss="sparse_cce" if task == "classify3" else "mse")
    kw.update(overrides)
    return nn.TrainConfig(**kw)


def _targets(model: WideDeepModel, table: SpectraTable) -> np.ndarray:
    if model.task == "classify3":
        if np.unique(table.labels).size < 2:
            raise ValueError("classification data holds a single class")
        return table.labels
    if not np.all(np.isfinite(table.forces)):
        raise ValueError("regression needs a finite compression force on every row")
    return table.forces


def split_validation(n: int, fraction: float, seed: int):
    """Seeded train/validation index split (validation gets ``round(n * fraction)``, min 1)."""
    order = np.random.default_rng([seed, 0x5A17]).permutation(n)
    n_val = min(max(1, int(round(n * fraction))), n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train_joint(model: WideDeepModel, table: SpectraTable, config: nn.TrainConfig,
                val_table: SpectraTable | None = None, val_fraction: float = 0.2):
    """Train every parameter (wide, deep, combiner) under one loss with one Adam.

    Without ``val_table`` a seeded ``val_fraction`` of ``table`` is held out for
    early stopping. Regression targets are standardized with training-row
    statistics. Returns ``(model, history)``; ``model`` is updated in place.
    """
    y_all = _targets(model, table)
    if val_table is None:
        tr, va = split_validation(len(table), val_fraction, config.seed)
        train_t, val_t = table.subset(tr), table.subset(va)
        y_tr, y_va = y_all[tr], y_all[va]
    else:
        train_t, val_t = table, val_table
        y_tr, y_va = y_all, _targets(model, val_table)

    if model.normalization == "zscore":
        model.zstats = ZScoreStats.fit(train_t.X)
    Xtr, Xva = model.prepare(train_t.X), model.prepare(val_t.X)

    if model.task == "regress1":
        model.y_mean = float(np.mean(y_tr))
        sd = float(np.std(y_tr))
        model.y_sd = sd if sd > 1e-12 else 1.0
        y_tr = (y_tr - model.y_mean) / model.y_sd
        y_va = (y_va - model.y_mean) / model.y_sd
    want = "sparse_cce" if model.task == "classify3" else "mse"
    if config.loss != want:
        config = replace(config, loss=want)
    model.dropout_rate = config.dropout_rate

    _, hist = nn.train_loop(
        model.params(),
        lambda X, y, rng: model.loss_grad(X, y, rng),
        model.loss,
        (Xtr, y_tr), (Xva, y_va), config)
    return model, hist


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("NASWD_THREADS", "1")))
    except ValueError:
        return 1


def predict_cube(model: WideDeepModel, cube: HyperCube, mask) -> np.ndarray:
    """Per-pixel predictions over the masked part of a reflectance cube.

    Returns an int grid of class indices with -1 outside the mask (classify3)
    or a float grid of forces in N clamped to [0, 40], NaN outside the mask
    (regress1).
    """
    if cube.kind != "reflectance":
        raise ValueError("predict_cube needs a reflectance cube")
    if cube.bands != model.input_dim:
        raise ValueError(f"cube has {cube.bands} bands, model expects {model.input_dim}")
    mask = np.asarray(mask, dtype=bool)
    flat = np.flatnonzero(mask)
    spectra = cube.data.reshape(-1, cube.bands)[flat].astype(np.float64)

    chunks = np.array_split(np.arange(flat.size), max(1, min(_threads(), flat.size)))
    if len(chunks) > 1:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(lambda c: predict(model, spectra[c]), chunks))
        values = np.concatenate(parts) if parts else np.empty(0)
    else:
        values = predict(model, spectra) if flat.size else np.empty(0)

    if model.task == "classify3":
        grid = np.full(mask.shape, -1, dtype=np.int64)
        grid.flat[flat] = values
    else:
        grid = np.full(mask.shape, np.nan)
        grid.flat[flat] = np.clip(values, *FORCE_CLAMP)
    return grid


def save_model(model: WideDeepModel, path, config: dict | None = None):
    arrays = {}
    if model.use_wide:
        arrays["wide.W"], arrays["wide.b"] = model.wide.W, model.wide.b
        arrays["combiner.a_w"], arrays["combiner.a_d"] = model.a_w, model.a_d
    for i, layer in enumerate(model.deep):
        arrays[f"deep.{i}.W"], arrays[f"deep.{i}.b"] = layer.W, layer.b
    if model.zstats is not None:
        arrays["zscore.mean"], arrays["zscore.sd"] = model.zstats.mean, model.zstats.sd
    extra = {
        "task": model.task,
        "activations": [l.activation for l in model.deep],
        "dropout_rate": model.dropout_rate,
        "normalization": model.normalization,
        "y_mean": model.y_mean,
        "y_sd": model.y_sd,
        "arch": model.arch,
        "use_wide": model.use_wide,
    }
    nn.write_checkpoint(path, "widedeep" if model.use_wide else "mlp", arrays, config or {}, extra)


def load_model(path) -> WideDeepModel:
    doc = nn.read_checkpoint(path)
    a = doc["arrays"]
    deep = [nn.DenseLayer(a[f"deep.{i}.W"], a[f"deep.{i}.b"], act)
            for i, act in enumerate(doc["activations"])]
    model = WideDeepModel(doc["task"], deep, dropout_rate=doc["dropout_rate"],
                          normalization=doc["normalization"], y_mean=doc["y_mean"],
                          y_sd=doc["y_sd"], arch=doc["arch"])
    if doc["use_wide"]:
        model.wide = nn.DenseLayer(a["wide.W"], a["wide.b"], "identity")
        model.a_w, model.a_d = a["combiner.a_w"], a["combiner.a_d"]
    if "zscore.mean" in a:
        model.zstats = ZScoreStats(a["zscore.mean"], a["zscore.sd"])
    return model
