import json
import re
from pathlib import Path

from alphamine.cli import main

CONFIG = """\
seed: 7
paths:
  panel: panel.csv
  zoo: out/zoo.json
  output_dir: out
ranges:
  train: {{start: {train_start}, end: {train_end}}}
  test: {{start: {test_start}, end: {test_end}}}
dataset:
  horizon: 5
  lag: 1
dsl:
  max_len: 10
fitness: {{corr_cap: 0.7, min_ic: 0.3, min_icir: 0.1}}
miner:
  target_factors: 1
  library_size: 200
  epochs_per_round: 30
  predictor_epochs: 8
  batch_size: 32
  latent_dim: 12
  max_rounds: 4
combiner: {{max_factors: 3, window: 40, min_ic: 0.01, min_icir: 0.05, ridge: 0.0001}}
backtest: {{top_k: 3, max_changes: 1, cost_bps: 0.0}}
synthetic:
  n_stocks: 10
  n_days: 200
  planted: [{{expr: "ts_mean(volume,5)", weight: 1.0}}]
  noise_std: 0.2
"""


def write_config(tmp_path) -> Path:
    from alphamine.synthetic import trading_days

    days = trading_days(200)
    config = CONFIG.format(
        train_start=days[0].isoformat(),
        train_end=days[139].isoformat(),
        test_start=days[160].isoformat(),
        test_end=days[195].isoformat(),
    )
    path = tmp_path / "run.yaml"
    path.write_text(config)
    return path


def strip_stamps(text: str) -> str:
    lines = [
        line
        for line in text.splitlines()
        if "generated-at" not in line and "created_at" not in line
    ]
    return "\n".join(lines)


def test_gen_synth_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["gen-synth", "--config", str(cfg)]) == 0
    first = (tmp_path / "panel.csv").read_bytes()
    assert main(["gen-synth", "--config", str(cfg)]) == 0
    assert (tmp_path / "panel.csv").read_bytes() == first


def test_config_errors_listed_exhaustively(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(
        "seed: oops\n"
        "mystery: 1\n"
        "combiner: {max_factors: 0, window: 10}\n"
        "ranges:\n"
        "  train: {start: 2020-01-10, end: 2020-01-02}\n"
    )
    assert main(["mine", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert err.count("config error:") >= 4
    assert "seed" in err and "mystery" in err and "max_factors" in err


def test_missing_config_file(tmp_path, capsys):
    assert main(["mine", "--config", str(tmp_path / "absent.yaml")]) == 2


def test_missing_artifacts_name_producer(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["combine", "--config", str(cfg)]) == 3
    err = capsys.readouterr().err
    assert "gen-synth" in err or "mine" in err
    assert main(["backtest", "--config", str(cfg)]) == 3
    err = capsys.readouterr().err
    assert "combine" in err or "gen-synth" in err


def test_eval_expr_on_synthetic_panel(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["gen-synth", "--config", str(cfg)])
    code = main(["eval-expr", "--config", str(cfg), "S_log1p(ts_cov(high,volume,20))"])
    assert code == 0
    out = capsys.readouterr().out
    assert re.search(r"IC=-?\d+\.\d+", out)
    assert (tmp_path / "out" / "factor.csv").exists()


def test_eval_expr_rejects_bad_formula(tmp_path, capsys):
    cfg = write_config(tmp_path)
    main(["gen-synth", "--config", str(cfg)])
    assert main(["eval-expr", "--config", str(cfg), "ts_corr(high,5)"]) == 4


def test_full_pipeline_smoke_and_determinism(tmp_path, capsys):
    cfg = write_config(tmp_path)
    for command in ("gen-synth", "mine", "combine", "backtest", "report"):
        assert main([command, "--config", str(cfg)]) == 0, command
    out_dir = tmp_path / "out"
    report = (out_dir / "report.md").read_text()
    assert "| combined |" in report
    for column in ("IC", "RankIC", "ICIR", "cumulative return"):
        assert column in report

    zoo_doc = json.loads((out_dir / "zoo.json").read_text())
    assert zoo_doc["factors"], "zoo should not be empty"
    assert {"id", "expr", "rpn", "sign", "ic", "icir", "rank_ic", "admitted_at_round"} <= set(
        zoo_doc["factors"][0]
    )

    first = {
        name: strip_stamps((out_dir / name).read_text())
        for name in ("zoo.json", "predictions.csv", "snapshots.jsonl", "backtest.csv")
    }
    # second run with identical config and seed reproduces every artifact
    for command in ("gen-synth", "mine", "combine", "backtest"):
        assert main([command, "--config", str(cfg)]) == 0
    for name, body in first.items():
        assert strip_stamps((out_dir / name).read_text()) == body, name
