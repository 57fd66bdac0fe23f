"""Comparison models: NIPALS partial least squares and the deep-only MLP."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .preproc import SpectraTable, ZScoreStats, normalize
from .widedeep import ArchSpec, WideDeepModel, build, train_joint

NIPALS_TOL = 1e-12
NIPALS_MAX_ITER = 500
DEFAULT_COMPONENTS = 10


@dataclass
class PlsrModel:
    n_components: int
    x_mean: np.ndarray
    y_mean: np.ndarray
    weights: np.ndarray       # W, features x components
    loadings: np.ndarray      # P, features x components
    y_loadings: np.ndarray    # Q, targets x components
    scores: np.ndarray        # T, samples x components (training data)
    coef: np.ndarray          # B, features x targets
    normalization: str = "none"
    zstats: ZScoreStats | None = None

    def predict(self, X) -> np.ndarray:
        return plsr_predict(self, X)


def max_components(n_samples: int, n_features: int) -> int:
    return min(n_samples - 1, n_features)


def plsr_fit(X, y, n_components: int = DEFAULT_COMPONENTS, normalization: str = "none") -> PlsrModel:
    """Fit PLS regression with NIPALS deflation on centred data.

    ``y`` may be a vector or an ``(n, m)`` matrix. The inner loop stops when the
    weight vector moves by less than 1e-12 or after 500 iterations. If the
    target residual vanishes early, the remaining components are left out.
    With ``zscore`` the band statistics come from this ``X`` and are kept.
    """
    zstats = ZScoreStats.fit(X) if normalization == "zscore" else None
    X = normalize(X, normalization, zstats)
    Y = np.asarray(y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, d = X.shape
    if Y.shape[0] != n:
        raise ValueError("X and y have different row counts")
    if not np.all(np.isfinite(X)):
        raise ValueError("X has non-finite values")
    if not 1 <= n_components <= max_components(n, d):
        raise ValueError(
            f"n_components={n_components} outside [1, {max_components(n, d)}] for X of shape {X.shape}")
    x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    E, F = X - x_mean, Y - y_mean
    if np.all(np.abs(E) < 1e-300):
        raise ValueError("X has zero variance after centring")

    W, P, Q, T = [], [], [], []
    for _ in range(n_components):
        u = F[:, np.argmax(F.var(axis=0))]
        w_old = None
        for _ in range(NIPALS_MAX_ITER):
            w = E.T @ u
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                w = None
                break
            w /= norm
            t = E @ w
            q = F.T @ t / (t @ t)
            u = F @ q / (q @ q) if q @ q > 0 else u
            if w_old is not None and np.linalg.norm(w - w_old) < NIPALS_TOL:
                break
            w_old = w
        if w is None:
            break  # nothing left in F that X can explain
        tt = t @ t
        p = E.T @ t / tt
        q = F.T @ t / tt
        E = E - np.outer(t, p)
        F = F - np.outer(t, q)
        W.append(w), P.append(p), Q.append(q), T.append(t)

    k = len(W)
    if k == 0:
        coef = np.zeros((d, Y.shape[1]))
        Wm, Pm, Qm, Tm = (np.zeros((d, 0)), np.zeros((d, 0)), np.zeros((Y.shape[1], 0)),
                          np.zeros((n, 0)))
    else:
        Wm, Pm, Qm, Tm = (np.column_stack(W), np.column_stack(P), np.column_stack(Q),
                          np.column_stack(T))
        coef = Wm @ np.linalg.solve(Pm.T @ Wm, Qm.T)
    return PlsrModel(k, x_mean, y_mean, Wm, Pm, Qm, Tm, coef, normalization, zstats)


def plsr_predict(model: PlsrModel, x) -> np.ndarray:
    """``(x - x_mean) @ coef + y_mean``; one target returns a scalar per row."""
    if np.shape(x)[-1] != model.x_mean.size:
        raise ValueError(f"input has {np.shape(x)[-1]} features, model expects {model.x_mean.size}")
    x = normalize(x, model.normalization, model.zstats)
    out = (x - model.x_mean) @ model.coef + model.y_mean
    return out[..., 0] if model.coef.shape[1] == 1 else out


def save_plsr(model: PlsrModel, path):
    arrays = {"x_mean": model.x_mean, "y_mean": model.y_mean, "weights": model.weights,
              "loadings": model.loadings, "y_loadings": model.y_loadings, "coef": model.coef}
    if model.zstats is not None:
        arrays.update(z_mean=model.zstats.mean, z_sd=model.zstats.sd)
    nn.write_checkpoint(path, "plsr", arrays, {},
                        {"n_components": model.n_components, "normalization": model.normalization})


def load_plsr(path) -> PlsrModel:
    doc = nn.read_checkpoint(path)
    a = doc["arrays"]
    return PlsrModel(doc["n_components"], a["x_mean"], a["y_mean"], a["weights"], a["loadings"],
                     a["y_loadings"], np.zeros((0, doc["n_components"])), a["coef"],
                     doc["normalization"],
                     ZScoreStats(a["z_mean"], a["z_sd"]) if "z_mean" in a else None)


def mlp_baseline(spec: ArchSpec, table: SpectraTable, config: nn.TrainConfig, task: str,
                 seed: int = 0, val_table: SpectraTable | None = None,
                 normalization: str = "snv") -> tuple[WideDeepModel, nn.History]:
    """Deep stack only: same layers, loss and training loop as the wide-deep model,
    without the wide branch or combiner."""
    model = build(spec, table.X.shape[1], task, seed=seed, use_wide=False,
                  normalization=normalization)
    return train_joint(model, table, config, val_table=val_table)
