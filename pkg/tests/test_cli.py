import json

import pytest

from naswd.cli import PipelineConfig, build_parser, main
from pipeline_runner import FAST, run_pipeline


def test_synth_then_train(tmp_path, capsys):
    d = tmp_path / "d"
    assert main(["synth", "--seed", "7", "--out", str(d), "--n-per-class", "3", "3", "3"]) == 0
    assert main(["train", "--task", "classify", "--data", str(d), "--out", str(tmp_path / "m")] + FAST) == 0
    assert (tmp_path / "m/model.json").exists()
    manifest = json.loads((tmp_path / "m/manifest.json").read_text())
    assert manifest["stages"]["train"]["seed"] == 0


def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag():
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", "x", "--bogus"])
    assert exc.value.code == 2


def test_tune_budget_precondition(tmp_path, capsys):
    code = main(["tune", "--budget", "1", "--n-init", "2", "--spectra", "missing.csv",
                 "--out", str(tmp_path)])
    err = capsys.readouterr().err
    assert code == 1 and "budget" in err and err.count("\n") == 1


def test_missing_input(tmp_path, capsys):
    code = main(["calibrate", "--raw", "nope.hdr", "--dark", "a.hdr", "--white", "b.hdr",
                 "--out", str(tmp_path)])
    assert code == 1 and capsys.readouterr().err.startswith("naswd calibrate: error:")


def test_config_defaults_and_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"budget": 12, "n_init": 4, "seed": 5}))
    parser = build_parser()
    from naswd.cli import _apply_config
    args = _apply_config(parser, ["tune", "--config", str(cfg), "--out", "o", "--seed", "9"])
    assert (args.budget, args.n_init, args.seed) == (12, 4, 9)


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_pipeline_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(k=1)
    with pytest.raises(ValueError):
        PipelineConfig(ceiling=0.0)


def test_regression_stages(tmp_path):
    d = tmp_path / "d"
    assert main(["synth", "--seed", "2", "--out", str(d), "--n-per-class", "4", "4", "4"]) == 0
    assert main(["evaluate", "--task", "regress", "--model", "plsr", "--data", str(d), "--k", "3",
                 "--components", "2", "--out", str(tmp_path / "e")]) == 0
    report = json.loads((tmp_path / "e/report.json").read_text())
    assert report["family"] == "plsr" and "p_value" in report["anova"]
    assert main(["train", "--task", "regress", "--model", "plsr", "--data", str(d),
                 "--components", "2", "--out", str(tmp_path / "m")]) == 0
    assert main(["map", "--task", "regress", "--model", str(tmp_path / "m/model.json"),
                 "--cube", str(d / "cubes/S001.hdr"), "--dark", str(d / "dark.hdr"),
                 "--white", str(d / "white.hdr"), "--out", str(tmp_path / "map")]) == 0
    pct = json.loads((tmp_path / "map/S001_percentages.json").read_text())["percentages"]
    assert sum(pct.values()) == pytest.approx(100, abs=0.01)


def test_map_task_mismatch(tmp_path):
    d = tmp_path / "d"
    main(["synth", "--seed", "2", "--out", str(d), "--n-per-class", "3", "3", "3"])
    main(["train", "--data", str(d), "--out", str(tmp_path / "m")] + FAST)
    assert main(["map", "--task", "regress", "--model", str(tmp_path / "m/model.json"),
                 "--cube", str(d / "cubes/S000.hdr"), "--dark", str(d / "dark.hdr"),
                 "--white", str(d / "white.hdr"), "--out", str(tmp_path / "map")]) == 1


def test_pipeline_is_deterministic(tmp_path):
    a = run_pipeline(tmp_path / "a")
    b = run_pipeline(tmp_path / "b")
    for name in a:
        assert a[name] == b[name], name
