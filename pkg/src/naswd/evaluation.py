"""Cross-validation harness and metrics.

Includes confusion-matrix classification metrics with a t-interval over fold
accuracies, correlation/R^2/RMSE regression metrics, and one-way ANOVA whose
p-value comes from a continued-fraction regularized incomplete beta.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import baselines
from .preproc import LABELS, SpectraTable
from .widedeep import ArchSpec, build, predict, train_config, train_joint

FAMILIES = ("naswd", "mlp", "plsr")


# -- folds -----------------------------------------------------------------

@dataclass
class FoldSplit:
    k: int
    assignments: np.ndarray

    def folds(self):
        """Yield ``(train_idx, test_idx)`` for each fold in order."""
        for f in range(self.k):
            yield np.flatnonzero(self.assignments != f), np.flatnonzero(self.assignments == f)

    def sizes(self):
        return np.bincount(self.assignments, minlength=self.k)


def kfold_split(n: int, k: int, seed: int = 0) -> FoldSplit:
    """Seeded shuffle followed by contiguous chunks; fold sizes differ by at most 1."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    order = np.random.default_rng([seed, 0xF01D]).permutation(n)
    assign = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(order, k)):
        assign[chunk] = f
    return FoldSplit(k, assign)


# -- classification --------------------------------------------------------

@dataclass
class ClassifMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    mean_fold_accuracy: float
    ci_low: float
    ci_high: float
    flags: list = field(default_factory=list)


def confusion_matrix(preds, labels, n_classes: int = 3) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def t_interval(values, level: float = 0.95):
    """Mean +- t * sd / sqrt(k) over ``values``, clipped to [0, 1]."""
    v = np.asarray(values, dtype=np.float64)
    m = float(v.mean())
    if v.size < 2 or np.ptp(v) == 0:
        return m, m, m
    half = stats.t.ppf(0.5 + level / 2, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size)
    return m, max(0.0, m - half), min(1.0, m + half)


def classification_metrics(preds, labels, fold_accuracies=None, n_classes: int = 3):
    """Weighted (by class support) precision/recall/F1, accuracy and a fold CI.

    Returns ``(ClassifMetrics, confusion_matrix)``. A class never predicted
    gets precision 0; a class absent from ``labels`` is flagged.
    """
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.size == 0 or preds.size != labels.size:
        raise ValueError("need equal-length, non-empty predictions and labels")
    cm = confusion_matrix(preds, labels, n_classes)
    total = cm.sum()
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm).astype(np.float64)
    flags = [f"class {LABELS[c] if n_classes == 3 else c} absent from labels"
             for c in range(n_classes) if support[c] == 0]
    prec = np.divide(tp, predicted, out=np.zeros(n_classes), where=predicted > 0)
    rec = np.divide(tp, support, out=np.zeros(n_classes), where=support > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros(n_classes), where=denom > 0)
    w = support / total
    acc = float(np.trace(cm) / total)
    if fold_accuracies is None or len(fold_accuracies) == 0:
        fold_accuracies = [acc]
    m, lo, hi = t_interval(fold_accuracies)
    return ClassifMetrics(acc, float(w @ prec), float(w @ rec), float(w @ f1), m, lo, hi, flags), cm


# -- regression ------------------------------------------------------------

@dataclass
class RegrMetrics:
    r: float
    r2: float
    rmse: float
    rmse_std: float
    degenerate: bool = False


def regression_metrics(preds, targets, scale: float | None = None) -> RegrMetrics:
    """Pearson r, R^2 = 1 - SS_res/SS_tot and RMSE.

    ``rmse_std`` is RMSE divided by ``scale`` (default: target sd). Constant
    predictions give r = 0 with ``degenerate=True``.
    """
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.size < 2 or p.size != t.size:
        raise ValueError("need at least two paired predictions and targets")
    tc = t - t.mean()
    ss_tot = float(tc @ tc)
    if ss_tot <= 0:
        raise ValueError("targets have zero variance")
    res = p - t
    ss_res = float(res @ res)
    pc = p - p.mean()
    ss_p = float(pc @ pc)
    degenerate = ss_p <= 0
    r = 0.0 if degenerate else float(pc @ tc / math.sqrt(ss_p * ss_tot))
    rmse = math.sqrt(ss_res / p.size)
    if scale is None:
        scale = math.sqrt(ss_tot / p.size)
    return RegrMetrics(r, 1.0 - ss_res / ss_tot, rmse, rmse / scale, degenerate)


# -- ANOVA -----------------------------------------------------------------

BETA_TOL = 1e-12
BETA_MAX_ITER = 300


def _beta_cf(a, b, x):
    """Continued fraction for the incomplete beta, modified Lentz evaluation."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < BETA_TOL:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # the fraction converges fast only on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def f_cdf(f: float, df1: float, df2: float) -> float:
    if f <= 0:
        return 0.0
    if math.isinf(f):
        return 1.0
    return betainc(df1 / 2.0, df2 / 2.0, df1 * f / (df1 * f + df2))


def f_sf(f: float, df1: float, df2: float) -> float:
    """Upper tail 1 - F_cdf, evaluated directly to keep small p-values accurate."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


@dataclass
class AnovaResult:
    f_stat: float
    df_between: int
    df_within: int
    p_value: float


def one_way_anova(groups) -> AnovaResult:
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2 or any(g.size < 2 for g in groups):
        raise ValueError("ANOVA needs at least 2 groups with at least 2 values each")
    allv = np.concatenate(groups)
    grand = allv.mean()
    ss_total = float(np.sum((allv - grand) ** 2))
    if ss_total <= 0:
        raise ValueError("all values are identical; ANOVA is undefined")
    ss_between = float(sum(g.size * (g.mean() - grand) ** 2 for g in groups))
    ss_within = float(sum(np.sum((g - g.mean()) ** 2) for g in groups))
    df_b, df_w = len(groups) - 1, allv.size - len(groups)
    ms_w = ss_within / df_w
    f = math.inf if ms_w == 0 else (ss_between / df_b) / ms_w
    return AnovaResult(f, df_b, df_w, f_sf(f, df_b, df_w))


# -- cross-validation ------------------------------------------------------

@dataclass
class EvalReport:
    family: str
    task: str
    k: int
    seed: int
    spec: dict | None
    folds: list
    metrics: dict
    confusion: list | None = None
    skipped_folds: list = field(default_factory=list)
    objective: float = float("nan")
    anova: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")


DEFAULT_TRAIN = dict(max_epochs=2000, patience=100)


def fit_family(family: str, task: str, table: SpectraTable, spec: ArchSpec | None = None,
               seed: int = 0, train_kw: dict | None = None, n_components: int | None = None,
               normalization: str = "snv"):
    """Train one model of a family on ``table``; returns ``(model, predict_fn)``."""
    if family == "plsr":
        if task != "regress1":
            raise ValueError("PLSR is a regression baseline only")
        k = min(n_components or baselines.DEFAULT_COMPONENTS,
                baselines.max_components(len(table), table.X.shape[1]))
        model = baselines.plsr_fit(table.X, table.forces, k, normalization=normalization)
        return model, model.predict
    if family not in ("naswd", "mlp"):
        raise ValueError(f"unknown model family {family!r}")
    spec = spec or ArchSpec()
    cfg = train_config(spec, task, seed=seed, **{**DEFAULT_TRAIN, **(train_kw or {})})
    model = build(spec, table.X.shape[1], task, seed=seed, use_wide=family == "naswd",
                  normalization=normalization)
    train_joint(model, table, cfg)
    return model, lambda X: predict(model, X)


def run_cv(family: str, task: str, table: SpectraTable, spec: ArchSpec | None = None,
           k: int = 5, seed: int = 0, train_kw: dict | None = None,
           n_components: int | None = None, normalization: str = "snv") -> EvalReport:
    """K-fold evaluation of a model family.

    Classification pools the confusion matrix over folds and puts a t-interval
    on the per-fold accuracies. Regression reports metrics on the pooled
    out-of-fold predictions, with per-fold values in ``folds``. The report's
    ``objective`` is the mean fold accuracy (classification) or the negative
    mean fold MSE (regression).
    """
    if task == "regress1" and not np.all(np.isfinite(table.forces)):
        raise ValueError("regression CV needs a force value on every row")
    split = kfold_split(len(table), k, seed)
    folds, skipped = [], []
    oof = np.full(len(table), np.nan)
    for f, (tr, te) in enumerate(split.folds()):
        train_t, test_t = table.subset(tr), table.subset(te)
        if task == "classify3" and np.unique(train_t.labels).size < len(LABELS):
            skipped.append(f)
            continue
        _, pred_fn = fit_family(family, task, train_t, spec, seed=seed * 1000 + f,
                                train_kw=train_kw, n_components=n_components,
                                normalization=normalization)
        pred_te = pred_fn(test_t.X)
        pred_tr = pred_fn(train_t.X)
        oof[te] = pred_te
        if task == "classify3":
            folds.append({"fold": f, "n_test": int(te.size),
                          "train_accuracy": float(np.mean(pred_tr == train_t.labels)),
                          "accuracy": float(np.mean(pred_te == test_t.labels))})
        else:
            rec = {"fold": f, "n_test": int(te.size),
                   "mse": float(np.mean((pred_te - test_t.forces) ** 2))}
            if te.size >= 2 and np.var(test_t.forces) > 0:
                m = regression_metrics(pred_te, test_t.forces)
                rec.update(r=m.r, r2=m.r2, rmse=m.rmse)
            folds.append(rec)
    if not folds:
        raise ValueError("every fold was skipped")

    done = ~np.isnan(oof)
    spec_d = spec.to_dict() if (spec is not None and family != "plsr") else None
    if task == "classify3":
        accs = [fr["accuracy"] for fr in folds]
        cm_metrics, cm = classification_metrics(oof[done].astype(np.int64), table.labels[done], accs)
        metrics = asdict(cm_metrics)
        metrics["train_accuracy"] = float(np.mean([fr["train_accuracy"] for fr in folds]))
        objective = cm_metrics.mean_fold_accuracy
        confusion = cm.tolist()
    else:
        rm = regression_metrics(oof[done], table.forces[done])
        metrics = asdict(rm)
        for key in ("r", "r2", "rmse"):
            vals = [fr[key] for fr in folds if key in fr]
            if vals:
                metrics[f"fold_mean_{key}"] = float(np.mean(vals))
        objective = -float(np.mean([fr["mse"] for fr in folds]))
        confusion = None
    return EvalReport(family, task, k, seed, spec_d, folds, metrics, confusion, skipped, objective)


def cv_objective(family: str, task: str, table: SpectraTable, k: int = 5, seed: int = 0,
                 train_kw: dict | None = None, normalization: str = "snv"):
    """Objective callback for architecture search: spec -> mean CV score and fold scores."""
    def objective(spec: ArchSpec):
        rep = run_cv(family, task, table, spec, k, seed, train_kw, normalization=normalization)
        key = "accuracy" if task == "classify3" else "mse"
        sign = 1.0 if task == "classify3" else -1.0
        return {"objective": rep.objective, "fold_scores": [sign * f[key] for f in rep.folds]}
    return objective
