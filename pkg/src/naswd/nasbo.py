"""Bayesian-optimization architecture search.

Architectures are encoded into the 6-D unit cube, a Matern-5/2 ARD Gaussian
process is fitted to the trial objectives, and the next architecture is the
candidate with the largest expected improvement.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import lapack, solve_triangular
from scipy.special import erfc
from scipy.stats import qmc

from .widedeep import ArchSpec

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid")
UNITS = (32, 512)
LAYERS = (1, 3)
DROPOUT_MAX = 0.5
LOG_LR = (math.log(1e-4), math.log(1e-2))
N_DIMS = 6

_SQRT5 = math.sqrt(5.0)


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


@dataclass(frozen=True)
class SearchSpace:
    """The architecture domain; the defaults are the full published ranges."""

    units: tuple = UNITS
    layers: tuple = LAYERS
    dropout_max: float = DROPOUT_MAX
    log_lr: tuple = LOG_LR

    def encode(self, spec: ArchSpec) -> np.ndarray:
        return np.array([
            1.0 if spec.activation == "relu" else 0.0,
            1.0 if spec.activation == "sigmoid" else 0.0,
            (spec.units - self.units[0]) / (self.units[1] - self.units[0]),
            (spec.n_layers - self.layers[0]) / (self.layers[1] - self.layers[0]),
            spec.dropout / self.dropout_max,
            (math.log(spec.learning_rate) - self.log_lr[0]) / (self.log_lr[1] - self.log_lr[0]),
        ])

    def decode(self, u) -> ArchSpec:
        u = np.clip(np.asarray(u, dtype=np.float64), 0.0, 1.0)
        units = int(_round_half_up(self.units[0] + u[2] * (self.units[1] - self.units[0])))
        layers = int(_round_half_up(self.layers[0] + u[3] * (self.layers[1] - self.layers[0])))
        lr = math.exp(self.log_lr[0] + u[5] * (self.log_lr[1] - self.log_lr[0]))
        # exp(log(x)) can land one ulp outside the bounds
        lr = min(max(lr, math.exp(self.log_lr[0])), math.exp(self.log_lr[1]))
        return ArchSpec("relu" if u[0] >= u[1] else "sigmoid", units, layers,
                        float(u[4] * self.dropout_max), lr)

    def snap(self, U) -> np.ndarray:
        """Project unit-cube rows onto valid encodings (integer/categorical snap)."""
        U = np.clip(np.atleast_2d(np.asarray(U, dtype=np.float64)), 0.0, 1.0)
        out = U.copy()
        relu = U[:, 0] >= U[:, 1]
        out[:, 0], out[:, 1] = relu, ~relu
        span_u = self.units[1] - self.units[0]
        out[:, 2] = (_round_half_up(self.units[0] + U[:, 2] * span_u) - self.units[0]) / span_u
        span_l = self.layers[1] - self.layers[0]
        out[:, 3] = (_round_half_up(self.layers[0] + U[:, 3] * span_l) - self.layers[0]) / span_l
        return out

    def sample(self, rng: np.random.Generator) -> ArchSpec:
        return self.decode(rng.random(N_DIMS))


def encode(spec: ArchSpec, space: SearchSpace = SearchSpace()) -> np.ndarray:
    return space.encode(spec)


def decode(u, space: SearchSpace = SearchSpace()) -> ArchSpec:
    return space.decode(u)


# -- Gaussian process ------------------------------------------------------

LENGTH_BOUNDS = (1e-2, 1e1)
SIGNAL_BOUNDS = (1e-2, 1e1)
NOISE_BOUNDS = (1e-8, 1.0)
JITTER_START, JITTER_MAX = 1e-8, 1e-2


def matern52(r):
    a = _SQRT5 * r
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


def _sq_diffs(A, B):
    return (A[:, None, :] - B[None, :, :]) ** 2


def _cholesky_with_jitter(K, base_noise):
    """Lower Cholesky factor of ``K + (noise + jitter) I``, escalating jitter x10 from 1e-8."""
    jitter = JITTER_START
    diag = np.arange(K.shape[0])
    while jitter <= JITTER_MAX * (1 + 1e-12):
        A = K.copy()
        A[diag, diag] += base_noise + jitter
        L, info = lapack.dpotrf(A, lower=1, clean=1)
        if info == 0:
            return L, jitter
        jitter *= 10.0
    raise np.linalg.LinAlgError("kernel matrix not positive definite even with jitter 1e-2")


@dataclass
class GpModel:
    X: np.ndarray
    y_raw: np.ndarray
    y: np.ndarray
    y_mean: float
    y_sd: float
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    jitter: float
    chol: np.ndarray
    alpha: np.ndarray
    lml: float

    def posterior(self, Xq):
        """Predictive mean and latent variance at query rows, in objective units."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
        r = np.sqrt(_sq_diffs(Xq, self.X) @ (1.0 / self.lengthscales ** 2))
        Ks = self.signal_var * matern52(r)
        mean = Ks @ self.alpha
        v = solve_triangular(self.chol, Ks.T, lower=True)
        var = np.maximum(self.signal_var - np.sum(v * v, axis=0), 0.0)
        return mean * self.y_sd + self.y_mean, var * self.y_sd ** 2


def _dedupe(X, y, tol=1e-9):
    keep_X, keep_y, counts = [], [], []
    for xi, yi in zip(X, y):
        for j, xk in enumerate(keep_X):
            if np.max(np.abs(xk - xi)) < tol:
                keep_y[j] += yi
                counts[j] += 1
                break
        else:
            keep_X.append(xi.copy())
            keep_y.append(float(yi))
            counts.append(1)
    return np.array(keep_X), np.array(keep_y) / np.array(counts)


class _Lml:
    """Log marginal likelihood over log-hyperparameters [ls..., signal, noise]."""

    def __init__(self, X, y, fixed_noise=None):
        self.D = _sq_diffs(X, X)
        self.y = y
        self.n = len(y)
        self.fixed_noise = fixed_noise

    def unpack(self, theta):
        ls = np.exp(theta[:-2])
        sig = math.exp(theta[-2])
        noise = self.fixed_noise if self.fixed_noise is not None else math.exp(theta[-1])
        return ls, sig, noise

    def factor(self, theta):
        ls, sig, noise = self.unpack(theta)
        K = sig * matern52(np.sqrt(self.D @ (1.0 / ls ** 2)))
        L, jitter = _cholesky_with_jitter(K, noise)
        alpha, _ = lapack.dpotrs(L, self.y, lower=1)
        lml = (-0.5 * float(self.y @ alpha) - float(np.log(np.diag(L)).sum())
               - 0.5 * self.n * math.log(2 * math.pi))
        return lml, L, alpha, jitter

    def __call__(self, theta):
        try:
            return self.factor(theta)[0]
        except np.linalg.LinAlgError:
            return -np.inf


def coordinate_search(f, theta0, lo, hi, step=1.0, min_step=0.05, max_evals=250):
    """Bounded pattern search maximizing ``f``: probe +-step per coordinate,
    halve the step after a sweep without improvement."""
    theta = np.clip(np.asarray(theta0, dtype=np.float64), lo, hi)
    best = f(theta)
    evals = 1
    while step >= min_step and evals < max_evals:
        improved = False
        for i in range(len(theta)):
            for sgn in (1.0, -1.0):
                cand = theta.copy()
                cand[i] = min(max(cand[i] + sgn * step, lo[i]), hi[i])
                if cand[i] == theta[i]:
                    continue
                val = f(cand)
                evals += 1
                if val > best + 1e-12:
                    theta, best, improved = cand, val, True
                    break
        if not improved:
            step *= 0.5
    return theta, best


def gp_fit(X, y, seed: int = 0, restarts: int = 16, noise: float | None = None) -> GpModel:
    """Fit a Matern-5/2 ARD GP by maximizing the log marginal likelihood.

    Targets are standardized internally; near-duplicate inputs are merged with
    their targets averaged. ``noise`` fixes the noise variance (standardized
    units) instead of fitting it. Hyperparameters come from ``restarts``
    seeded coordinate searches in log space; the first start is a fixed
    default and later starts only win by a margin above 1e-9.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    X, y = _dedupe(X, y)
    if len(X) < 1:
        raise ValueError("gp_fit needs at least one point")
    y_mean = float(y.mean())
    y_sd = float(y.std())
    if y_sd <= 1e-12:
        y_sd = 1.0
    ys = (y - y_mean) / y_sd

    d = X.shape[1]
    lo = np.log([LENGTH_BOUNDS[0]] * d + [SIGNAL_BOUNDS[0], NOISE_BOUNDS[0]])
    hi = np.log([LENGTH_BOUNDS[1]] * d + [SIGNAL_BOUNDS[1], NOISE_BOUNDS[1]])
    if noise is not None:
        lo[-1] = hi[-1] = math.log(max(noise, NOISE_BOUNDS[0]))
    lml = _Lml(X, ys, fixed_noise=noise)
    rng = np.random.default_rng([seed, 0x6B])
    starts = [np.log([0.5] * d + [1.0, 1e-6 if noise is None else max(noise, 1e-8)])]
    starts += [rng.uniform(lo, hi) for _ in range(restarts - 1)]

    best_theta, best_val = None, -np.inf
    for s in starts:
        theta, val = coordinate_search(lml, s, lo, hi)
        if best_theta is None or val > best_val + 1e-9:
            best_theta, best_val = theta, val
    if not np.isfinite(best_val):
        raise np.linalg.LinAlgError("GP factorization failed for every hyperparameter start")
    val, L, alpha, jitter = lml.factor(best_theta)
    ls, sig, nv = lml.unpack(best_theta)
    return GpModel(X, y, ys, y_mean, y_sd, ls, sig, nv, jitter, L, alpha, val)


def gp_posterior(gp: GpModel, x):
    """Mean and variance at one encoded point (or rows of points)."""
    mean, var = gp.posterior(x)
    if np.ndim(x) == 1:
        return float(mean[0]), float(var[0])
    return mean, var


def norm_pdf(z):
    with np.errstate(over="ignore"):  # huge |z| squares to inf, density 0
        return np.exp(-0.5 * np.asarray(z, dtype=np.float64) ** 2) / math.sqrt(2 * math.pi)


def norm_cdf(z):
    return 0.5 * erfc(-np.asarray(z, dtype=np.float64) / math.sqrt(2.0))


def expected_improvement(mean, variance, best_so_far):
    """EI for maximization; reduces to ``max(0, mean - best)`` where variance is 0."""
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    gap = mean - best_so_far
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sd > 0, gap / np.where(sd > 0, sd, 1.0), 0.0)
    ei = np.where(sd > 0, gap * norm_cdf(z) + sd * norm_pdf(z), np.maximum(gap, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def propose_next(gp: GpModel | None, space: SearchSpace, rng: np.random.Generator,
                 n_candidates: int = 2048) -> ArchSpec:
    """Best-EI architecture among seeded random candidates (snapped to valid encodings).

    With no fitted GP a uniformly random valid architecture is returned.
    """
    if gp is None:
        return space.sample(rng)
    cand = space.snap(rng.random((n_candidates, N_DIMS)))
    mean, var = gp.posterior(cand)
    ei = expected_improvement(mean, var, float(np.max(gp.y_raw)))
    return space.decode(cand[int(np.argmax(ei))])


@dataclass
class TrialRecord:
    index: int
    spec: ArchSpec
    objective: float
    fold_scores: list = field(default_factory=list)
    seconds: float = 0.0
    failed: bool = False
    phase: str = "bo"

    def to_dict(self, timing: bool = False) -> dict:
        d = {"trial": self.index, "phase": self.phase, **self.spec.to_dict(),
             "objective": self.objective if np.isfinite(self.objective) else None,
             "fold_scores": list(self.fold_scores), "failed": self.failed}
        if timing:
            d["seconds"] = self.seconds
        return d


def _evaluate(objective, spec, index, phase) -> TrialRecord:
    t0 = time.perf_counter()
    try:
        res = objective(spec)
    except FloatingPointError as exc:
        log.warning("trial %d failed: %s", index, exc)
        res = float("nan")
    if isinstance(res, dict):
        value, folds = res["objective"], res.get("fold_scores", [])
    else:
        value, folds = res, []
    value = float(value)
    failed = not np.isfinite(value)
    return TrialRecord(index, spec, -np.inf if failed else value, [float(f) for f in folds],
                       time.perf_counter() - t0, failed, phase)


def initial_design(space: SearchSpace, n: int, seed: int) -> list:
    """Scrambled Latin-hypercube starting architectures."""
    U = qmc.LatinHypercube(d=N_DIMS, seed=np.random.default_rng([seed, 0x1D])).random(n)
    return [space.decode(u) for u in U]


def best_trial(trials) -> TrialRecord:
    ok = [t for t in trials if not t.failed]
    if not ok:
        raise RuntimeError("every trial failed")
    return max(ok, key=lambda t: (t.objective, -t.index))


def bo_search(objective, space: SearchSpace = SearchSpace(), budget: int = 40, n_init: int = 8,
              seed: int = 0, gp_restarts: int = 16, n_candidates: int = 2048, callback=None):
    """Sequential GP/EI search.

    ``objective(spec)`` returns a float to maximize, or a dict with keys
    ``objective`` and ``fold_scores``. Non-finite results are logged as failed
    trials and left out of the GP. Returns ``(best_record, all_records)``.
    """
    if n_init < 2 or budget < n_init:
        raise ValueError(f"need budget >= n_init >= 2 (got budget={budget}, n_init={n_init})")
    rng = np.random.default_rng([seed, 0xB0])
    trials = []
    for spec in initial_design(space, n_init, seed):
        trials.append(_evaluate(objective, spec, len(trials), "init"))
        if callback:
            callback(trials[-1])
    while len(trials) < budget:
        ok = [t for t in trials if not t.failed]
        gp = None
        if len(ok) >= 2:
            gp = gp_fit([space.encode(t.spec) for t in ok], [t.objective for t in ok],
                        seed=seed + len(trials), restarts=gp_restarts)
        spec = propose_next(gp, space, rng, n_candidates)
        trials.append(_evaluate(objective, spec, len(trials), "bo"))
        if callback:
            callback(trials[-1])
    return best_trial(trials), trials


def random_search(objective, space: SearchSpace = SearchSpace(), budget: int = 40, seed: int = 0):
    rng = np.random.default_rng([seed, 0xA5])
    trials = [_evaluate(objective, space.sample(rng), i, "random") for i in range(budget)]
    return best_trial(trials), trials


def write_trial_log(trials, path, timing_path=None):
    """One JSON object per line. Wall times go to ``timing_path`` so the main
    log is reproducible byte for byte."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for t in trials:
            fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")
    if timing_path is not None:
        with open(timing_path, "w") as fh:
            for t in trials:
                fh.write(json.dumps({"trial": t.index, "seconds": t.seconds}) + "\n")


def read_trial_log(path) -> list:
    out = []
    for line in Path(path).read_text().splitlines():
        d = json.loads(line)
        spec = ArchSpec(d["activation"], d["units"], d["n_layers"], d["dropout"], d["learning_rate"])
        obj = d["objective"] if d["objective"] is not None else -np.inf
        out.append(TrialRecord(d["trial"], spec, obj, d["fold_scores"], d.get("seconds", 0.0),
                               d["failed"], d["phase"]))
    return out


def spec_to_json(spec: ArchSpec) -> str:
    return json.dumps(asdict(spec), sort_keys=True)
