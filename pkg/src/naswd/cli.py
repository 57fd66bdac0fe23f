"""Command-line front end: one subcommand per pipeline stage.

Every stage writes under ``--out`` and records what it wrote, plus its seed and
settings, in ``manifest.json`` there. Settings may come from a JSON file given
with ``--config``; explicit flags override it.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, evaluation, maps, nasbo, preproc, synth, widedeep
from .hsi_io import payload_path, calibrate_reflectance, read_cube, write_cube
from .widedeep import ArchSpec

TASKS = {"classify": "classify3", "regress": "regress1"}
DEFAULT_REGION = {"classify": "whole", "regress": "cranial"}


@dataclass
class PipelineConfig:
    task: str = "classify"
    model: str = "naswd"
    arch: dict = field(default_factory=lambda: asdict(ArchSpec()))
    budget: int = 40
    n_init: int = 8
    k: int = 5
    seed: int = 0
    rules: dict = field(default_factory=lambda: asdict(preproc.LabRules()))
    normalization: str = "snv"
    ceiling: float = 10.8
    region: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {sorted(TASKS)}")
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.ceiling <= 0:
            raise ValueError("outlier ceiling must be positive")
        if not self.budget >= self.n_init >= 2:
            raise ValueError(f"need budget >= n_init >= 2 (got budget={self.budget}, "
                             f"n_init={self.n_init})")
        ArchSpec(**self.arch)
        preproc.LabRules.from_dict(self.rules)

    @property
    def task_key(self) -> str:
        return TASKS[self.task]

    @property
    def table_region(self) -> str:
        return self.region or DEFAULT_REGION[self.task]


def _config_from_args(args) -> PipelineConfig:
    arch = asdict(ArchSpec())
    if hasattr(args, "activation"):
        arch = dict(activation=args.activation, units=args.units, n_layers=args.layers,
                    dropout=args.dropout, learning_rate=args.lr)
    if getattr(args, "spec", None):
        arch = json.loads(Path(args.spec).read_text())
    rules = dict(L=tuple(args.lab_l), a=tuple(args.lab_a), b=tuple(args.lab_b))
    return PipelineConfig(
        task=getattr(args, "task", "classify"), model=getattr(args, "model", "naswd"), arch=arch,
        budget=getattr(args, "budget", 40), n_init=getattr(args, "n_init", 8),
        k=getattr(args, "k", 5), seed=args.seed, rules=rules,
        normalization=getattr(args, "normalization", "snv"),
        ceiling=getattr(args, "ceiling", 10.8), region=getattr(args, "region", None))


def _update_manifest(out_dir: Path, stage: str, artifacts, **info):
    """Merge one stage's record into ``out_dir/manifest.json``."""
    path = out_dir / "manifest.json"
    doc = json.loads(path.read_text()) if path.exists() else {}
    doc.setdefault("stages", {})[stage] = {
        "artifacts": sorted(str(Path(a).relative_to(out_dir)) for a in artifacts), **info}
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


def _reflectance(args):
    cube = read_cube(args.cube)
    if cube.kind == "reflectance":
        return cube
    if not (args.dark and args.white):
        raise ValueError(f"{args.cube} is a {cube.kind} cube; pass --dark and --white to calibrate it")
    return calibrate_reflectance(cube, read_cube(args.dark), read_cube(args.white))


def _load_table(args, cfg: PipelineConfig, *, filter_outliers: bool):
    """Rows for one region, from a dataset directory or an extracted CSV."""
    if bool(args.data) == bool(args.spectra):
        raise ValueError("give exactly one of --data or --spectra")
    rules = preproc.LabRules.from_dict(cfg.rules)
    if args.data:
        table = synth.load_dataset_table(args.data, rules, cfg.table_region != "whole",
                                         args.cranial_end)
    else:
        table = preproc.SpectraTable.from_csv(args.spectra)
    table = table.region(cfg.table_region)
    removed = 0
    if cfg.task == "regress" and filter_outliers:
        table, removed = synth.apply_outlier_filter(table, cfg.ceiling)
    return table, removed


def _train_kw(args) -> dict:
    return dict(max_epochs=args.max_epochs, patience=args.patience)


# subcommands

def cmd_synth(args, out: Path):
    overrides = {k: v for k, v in dict(coupling=args.coupling, noise_sd=args.noise_sd,
                                       severity_sd=args.severity_sd).items() if v is not None}
    if args.n_per_class:
        overrides["n_per_class"] = tuple(args.n_per_class)
    spec = synth.SyntheticSpec(seed=args.seed, **overrides)
    synth.synth_dataset(spec, out)
    print(f"wrote {sum(spec.n_per_class)} synthetic cubes to {out}")


def cmd_calibrate(args, out: Path):
    cube = calibrate_reflectance(read_cube(args.raw), read_cube(args.dark), read_cube(args.white))
    target = out / args.name
    write_cube(cube, target, data_type="f32")
    _update_manifest(out, "calibrate", [target, payload_path(target)], seed=args.seed, raw=args.raw,
                     dead_pixels=cube.meta.get("dead pixels", 0))
    print(f"reflectance cube: {target} ({cube.meta.get('dead pixels', 0)} dead elements)")


def cmd_mask(args, out: Path):
    cfg = _config_from_args(args)
    mask = preproc.fillet_mask(_reflectance(args), preproc.LabRules.from_dict(cfg.rules))
    part = preproc.partition_regions(mask, args.cranial_end)
    written = [preproc.export_mask_png(mask, out / "mask.png")]
    for name in preproc.REGIONS:
        written.append(preproc.export_mask_png(part.as_mask(name), out / f"mask_{name}.png"))
    _update_manifest(out, "mask", written, seed=args.seed, rules=cfg.rules,
                     cranial_end=args.cranial_end, pixels=int(mask.sum()))
    print(f"mask: {int(mask.sum())} pixels")


def cmd_extract(args, out: Path):
    cfg = _config_from_args(args)
    table = synth.load_dataset_table(args.data, preproc.LabRules.from_dict(cfg.rules),
                                     args.regions, args.cranial_end)
    target = out / "spectra.csv"
    table.to_csv(target)
    _update_manifest(out, "extract", [target], seed=args.seed, rows=len(table),
                     regions=args.regions, rules=cfg.rules)
    print(f"spectra: {len(table)} rows -> {target}")


def cmd_train(args, out: Path):
    cfg = _config_from_args(args)
    table, removed = _load_table(args, cfg, filter_outliers=True)
    target = out / "model.json"
    if cfg.model == "plsr":
        if cfg.task != "regress":
            raise ValueError("plsr only supports --task regress")
        n = min(args.components, baselines.max_components(*table.X.shape))
        model = baselines.plsr_fit(table.X, table.forces, n, cfg.normalization)
        baselines.save_plsr(model, target)
        summary = f"plsr with {model.n_components} components"
    else:
        spec = ArchSpec(**cfg.arch)
        model = widedeep.build(spec, table.X.shape[1], cfg.task_key, seed=cfg.seed,
                               use_wide=cfg.model == "naswd", normalization=cfg.normalization)
        config = widedeep.train_config(spec, cfg.task_key, seed=cfg.seed, **_train_kw(args))
        _, hist = widedeep.train_joint(model, table, config)
        widedeep.save_model(model, target, asdict(cfg))
        summary = f"{cfg.model} stopped after {len(hist.val_loss)} epochs (best {hist.best_epoch})"
    _update_manifest(out, "train", [target], seed=cfg.seed, config=asdict(cfg), rows=len(table),
                     outliers_removed=removed)
    print(f"trained {summary} on {len(table)} rows -> {target}")


def cmd_tune(args, out: Path):
    cfg = _config_from_args(args)
    table, removed = _load_table(args, cfg, filter_outliers=True)
    objective = evaluation.cv_objective("naswd", cfg.task_key, table, cfg.k, cfg.seed,
                                        _train_kw(args), cfg.normalization)
    best, trials = nasbo.bo_search(objective, budget=cfg.budget, n_init=cfg.n_init, seed=cfg.seed)
    log, timing, best_path = out / "trials.jsonl", out / "trial_seconds.json", out / "best_spec.json"
    nasbo.write_trial_log(trials, log, timing)
    best_path.write_text(json.dumps(asdict(best.spec), indent=1, sort_keys=True) + "\n")
    _update_manifest(out, "tune", [log, timing, best_path], seed=cfg.seed, budget=cfg.budget,
                     n_init=cfg.n_init, k=cfg.k, best_trial=best.index, outliers_removed=removed)
    print(f"best trial {best.index}: objective {best.objective:.4f} {nasbo.spec_to_json(best.spec)}")


def cmd_evaluate(args, out: Path):
    cfg = _config_from_args(args)
    table, removed = _load_table(args, cfg, filter_outliers=True)
    spec = None if cfg.model == "plsr" else ArchSpec(**cfg.arch)
    report = evaluation.run_cv(cfg.model, cfg.task_key, table, spec, cfg.k, cfg.seed,
                               _train_kw(args), args.components, cfg.normalization)
    if cfg.task == "regress":
        full, _ = _load_table(args, cfg, filter_outliers=False)
        groups = [full.forces[(full.labels == i) & np.isfinite(full.forces)]
                  for i in range(len(preproc.LABELS))]
        report.anova = asdict(evaluation.one_way_anova(groups))
    target = out / "report.json"
    report.write(target)
    _update_manifest(out, "evaluate", [target], seed=cfg.seed, config=asdict(cfg),
                     outliers_removed=removed)
    m = report.metrics
    if cfg.task == "classify":
        print(f"{cfg.model}: accuracy {m['mean_fold_accuracy']:.3f} "
              f"CI [{m['ci_low']:.3f}, {m['ci_high']:.3f}]")
    else:
        print(f"{cfg.model}: r {m['r']:.3f} R2 {m['r2']:.3f} RMSE {m['rmse']:.3f} N")


def _pixel_grid(model, cube, mask):
    """Per-pixel predictions from a wide-deep/MLP model or a PLSR model."""
    if isinstance(model, widedeep.WideDeepModel):
        return widedeep.predict_cube(model, cube, mask)
    if cube.bands != model.x_mean.size:
        raise ValueError(f"cube has {cube.bands} bands, model expects {model.x_mean.size}")
    grid = np.full(mask.shape, np.nan)
    pixels = cube.data.reshape(-1, cube.bands)[np.flatnonzero(mask)].astype(np.float64)
    grid.flat[np.flatnonzero(mask)] = np.clip(baselines.plsr_predict(model, pixels),
                                              *widedeep.FORCE_CLAMP)
    return grid


def cmd_map(args, out: Path):
    cfg = _config_from_args(args)
    kind = json.loads(Path(args.model_path).read_text()).get("kind")
    model = (baselines.load_plsr if kind == "plsr" else widedeep.load_model)(args.model_path)
    model_task = "regress1" if kind == "plsr" else model.task
    if model_task != cfg.task_key:
        raise ValueError(f"model was trained for {model_task}, not --task {cfg.task}")
    cube = _reflectance(args)
    mask = preproc.fillet_mask(cube, preproc.LabRules.from_dict(cfg.rules))
    grid = _pixel_grid(model, cube, mask)
    stem = Path(args.cube).stem
    if cfg.task == "classify":
        png = maps.render_class_map(grid, out / f"{stem}_class.png")
        pct = maps.class_percentages(grid)
    else:
        png, pct = maps.render_hardness_map(grid, out / f"{stem}_hardness.png")
    table = out / f"{stem}_percentages.json"
    maps.write_percentages(table, pct, task=cfg.task, cube=stem)
    _update_manifest(out, f"map:{stem}", [png, table], seed=cfg.seed, task=cfg.task)
    print(" ".join(f"{k}: {v:.1f}%" for k, v in pct.items()))


# parser

def _add_common(p, *, rules=False, arch=False, data=False, train=False):
    p.add_argument("--config", help="JSON file of defaults; explicit flags win")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    if rules:
        p.add_argument("--lab-l", type=float, nargs=2, default=preproc.LabRules.L, metavar=("LO", "HI"))
        p.add_argument("--lab-a", type=float, nargs=2, default=preproc.LabRules.a, metavar=("LO", "HI"))
        p.add_argument("--lab-b", type=float, nargs=2, default=preproc.LabRules.b, metavar=("LO", "HI"))
        p.add_argument("--cranial-end", choices=("low", "high"), default="low")
    if data:
        p.add_argument("--task", choices=sorted(TASKS), default="classify")
        p.add_argument("--data", help="dataset directory (cubes/, dark.hdr, white.hdr, labels.csv)")
        p.add_argument("--spectra", help="spectra CSV written by extract")
        p.add_argument("--region", choices=("whole",) + preproc.REGIONS,
                       help="table rows to use (default: whole for classify, cranial for regress)")
        p.add_argument("--normalization", choices=("snv", "zscore", "none"), default="snv")
        p.add_argument("--ceiling", type=float, default=10.8, help="regression outlier ceiling in N")
        p.add_argument("--k", type=int, default=5)
    if arch:
        d = ArchSpec()
        p.add_argument("--activation", choices=("relu", "sigmoid"), default=d.activation)
        p.add_argument("--units", type=int, default=d.units)
        p.add_argument("--layers", type=int, default=d.n_layers)
        p.add_argument("--dropout", type=float, default=d.dropout)
        p.add_argument("--lr", type=float, default=d.learning_rate)
        p.add_argument("--spec", help="JSON ArchSpec (e.g. best_spec.json from tune); overrides arch flags")
    if train:
        p.add_argument("--max-epochs", type=int, default=evaluation.DEFAULT_TRAIN["max_epochs"])
        p.add_argument("--patience", type=int, default=evaluation.DEFAULT_TRAIN["patience"])
        p.add_argument("--components", type=int, default=baselines.DEFAULT_COMPONENTS,
                       help="PLSR latent variables")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="naswd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset")
    _add_common(p)
    p.add_argument("--n-per-class", type=int, nargs=3, metavar=("NB", "MWB", "SWB"))
    p.add_argument("--coupling", type=float)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--severity-sd", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="dark/white reflectance calibration of one cube")
    _add_common(p)
    p.add_argument("--raw", required=True)
    p.add_argument("--dark", required=True)
    p.add_argument("--white", required=True)
    p.add_argument("--name", default="reflectance.hdr", help="header file name inside --out")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("mask", help="fillet and region masks of one cube as PNG")
    _add_common(p, rules=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--dark")
    p.add_argument("--white")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("extract", help="mean spectra of every cube in a dataset")
    _add_common(p, rules=True)
    p.add_argument("--data", required=True)
    p.add_argument("--regions", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", help="fit one model on the full table")
    _add_common(p, rules=True, arch=True, data=True, train=True)
    p.add_argument("--model", choices=("naswd", "mlp", "plsr"), default="naswd")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="Bayesian-optimization architecture search")
    _add_common(p, rules=True, arch=True, data=True, train=True)
    p.add_argument("--budget", type=int, default=40)
    p.add_argument("--n-init", type=int, default=8)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("evaluate", help="k-fold cross-validated metrics")
    _add_common(p, rules=True, arch=True, data=True, train=True)
    p.add_argument("--model", choices=("naswd", "mlp", "plsr"), default="naswd")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("map", help="per-pixel class or hardness map of one cube")
    _add_common(p, rules=True)
    p.add_argument("--task", choices=sorted(TASKS), default="classify")
    p.add_argument("--model", dest="model_path", required=True, help="model.json from train")
    p.add_argument("--cube", required=True)
    p.add_argument("--dark")
    p.add_argument("--white")
    p.set_defaults(func=cmd_map)
    return parser


def _apply_config(parser, argv):
    """Re-parse with defaults taken from ``--config`` so explicit flags still win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    doc = json.loads(Path(args.config).read_text())
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    sub.set_defaults(**doc)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    args = None
    try:
        args = _apply_config(parser, argv)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, out)
    except (ValueError, OSError, KeyError, RuntimeError, json.JSONDecodeError) as exc:
        stage = f" {args.command}" if args is not None else ""
        print(f"naswd{stage}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
