"""Command-line entry point wiring the full pipeline.

Subcommands: gen-synth, mine, combine, backtest, eval-expr, report. Every
command is driven by one YAML config; outputs are deterministic for a
fixed config and seed apart from `generated-at` metadata lines.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import logging
import math
import sys

import numpy as np

from .backtest import run_backtest, write_backtest_csv, write_equity_svg
from .combiner import (
    load_predictions_csv,
    run_combination,
    write_predictions_csv,
    write_snapshots_jsonl,
)
from .config import RunConfig, load_config, substream_seed
from .errors import AlphamineError, ConfigError, DataError, MissingArtifactError
from .evaluator import evaluate, write_factor_csv
from .expr import parse_text
from .metrics import factor_metrics
from .miner import run_mining
from .panel import compute_label, load_panel, save_panel
from .rpn import Vocabulary
from .synthetic import make_synthetic
from .zoo import FactorZoo, write_metrics_report

logger = logging.getLogger(__name__)


def _stamp() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _vocabulary(cfg: RunConfig) -> Vocabulary:
    if cfg.windows is None and cfg.constants is None:
        return Vocabulary.default()
    from .rpn import DEFAULT_CONSTANTS, DEFAULT_WINDOWS

    return Vocabulary.default(
        windows=cfg.windows or DEFAULT_WINDOWS,
        constants=cfg.constants or DEFAULT_CONSTANTS,
    )


def _labelled_panel(cfg: RunConfig):
    if not cfg.panel_path.exists():
        raise MissingArtifactError(cfg.panel_path, "gen-synth")
    panel = load_panel(cfg.panel_path)
    if panel.label is None:
        panel = compute_label(panel, cfg.horizon, cfg.lag)
    return panel


def _require_range(cfg: RunConfig, name: str):
    rng = getattr(cfg, f"{name}_range")
    if rng is None:
        raise ConfigError([f"ranges.{name} is required for this command"])
    return rng


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.4f}"


# -- commands ----------------------------------------------------------------------


def cmd_gen_synth(cfg: RunConfig) -> None:
    synth = cfg.synthetic
    panel = make_synthetic(
        synth.n_stocks,
        synth.n_days,
        synth.planted_exprs,
        synth.weights,
        synth.noise_std,
        seed=substream_seed(cfg.seed, "synthetic"),
    )
    cfg.panel_path.parent.mkdir(parents=True, exist_ok=True)
    save_panel(panel, cfg.panel_path)
    print(f"wrote synthetic panel ({synth.n_days} days x {synth.n_stocks} stocks) "
          f"to {cfg.panel_path}")


def cmd_mine(cfg: RunConfig) -> None:
    panel = _labelled_panel(cfg)
    vocab = _vocabulary(cfg)
    zoo = run_mining(panel, cfg.train_range, cfg.miner, vocab)
    cfg.zoo_path.parent.mkdir(parents=True, exist_ok=True)
    zoo.save_json(cfg.zoo_path)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    report = cfg.output_dir / "metrics_report.csv"
    write_metrics_report(zoo, panel, report)
    print(f"mined {len(zoo)} factor(s) -> {cfg.zoo_path}; metrics -> {report}")


def cmd_combine(cfg: RunConfig) -> None:
    if not cfg.zoo_path.exists():
        raise MissingArtifactError(cfg.zoo_path, "mine")
    panel = _labelled_panel(cfg)
    test_range = _require_range(cfg, "test")
    zoo = FactorZoo.load_json(cfg.zoo_path).revalue(panel)
    scores, snapshots = run_combination(zoo, panel, test_range, cfg.combiner)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    stamp = _stamp()
    pred_path = cfg.output_dir / "predictions.csv"
    snap_path = cfg.output_dir / "snapshots.jsonl"
    write_predictions_csv(scores, panel, pred_path, stamp)
    write_snapshots_jsonl(snapshots, snap_path, stamp)
    used = sorted({e.factor_id for s in snapshots for e in s.entries})
    print(f"combined {len(snapshots)} day(s) using {len(used)} distinct factor(s) "
          f"-> {pred_path}, {snap_path}")


def cmd_backtest(cfg: RunConfig) -> None:
    pred_path = cfg.output_dir / "predictions.csv"
    if not pred_path.exists():
        raise MissingArtifactError(pred_path, "combine")
    panel = _labelled_panel(cfg)
    scores = load_predictions_csv(pred_path, panel)
    result = run_backtest(scores, panel, cfg.backtest)
    out_csv = cfg.output_dir / "backtest.csv"
    out_svg = cfg.output_dir / "equity.svg"
    write_backtest_csv(result, out_csv, _stamp())
    write_equity_svg(result, out_svg)
    for flag in result.flags[:5]:
        logger.warning(flag)
    print(
        f"backtested {len(result.dates)} day(s): cumulative return "
        f"{result.cum_return[-1] * 100:.2f}%, mean daily turnover "
        f"{result.turnover.mean():.2f} -> {out_csv}, {out_svg}"
    )


def cmd_eval_expr(cfg: RunConfig, source: str) -> None:
    panel = _labelled_panel(cfg)
    expr = parse_text(source)
    values = evaluate(expr, panel)
    days = panel.day_mask(cfg.test_range) if cfg.test_range else None
    m = factor_metrics(values, panel.label, days)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "factor.csv"
    write_factor_csv(values, panel, out)
    print(f"factor values -> {out}")
    print(
        f"IC={_fmt(m.ic)} RankIC={_fmt(m.rank_ic)} "
        f"ICIR={_fmt(m.icir)} RankICIR={_fmt(m.rank_icir)} days={m.n_days}"
    )


def cmd_report(cfg: RunConfig) -> None:
    pred_path = cfg.output_dir / "predictions.csv"
    bt_path = cfg.output_dir / "backtest.csv"
    if not pred_path.exists():
        raise MissingArtifactError(pred_path, "combine")
    if not bt_path.exists():
        raise MissingArtifactError(bt_path, "backtest")
    panel = _labelled_panel(cfg)
    scores = load_predictions_csv(pred_path, panel)
    days = panel.day_mask(cfg.test_range) if cfg.test_range else None
    m = factor_metrics(scores, panel.label, days)
    cum = math.nan
    with open(bt_path, newline="") as fh:
        for row in csv.DictReader(line for line in fh if not line.startswith("#")):
            cum = float(row["cum_return"])
    lines = [
        "# Run report",
        "",
        f"- generated-at: {_stamp()}",
        f"- panel: `{cfg.panel_path}`",
        "",
        "| signal | IC | RankIC | ICIR | cumulative return |",
        "|--------|----|--------|------|-------------------|",
        f"| combined | {_fmt(m.ic)} | {_fmt(m.rank_ic)} | {_fmt(m.icir)} | {_fmt(cum)} |",
        "",
    ]
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    out = cfg.output_dir / "report.md"
    out.write_text("\n".join(lines))
    print("\n".join(lines[5:8]))
    print(f"report -> {out}")


# -- dispatch ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alphamine",
        description="Mine formulaic alpha factors, combine them daily, backtest.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="INFO logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen-synth", "write a synthetic panel CSV with a planted signal"),
        ("mine", "mine a factor zoo on the training range"),
        ("combine", "build daily combined predictions over the test range"),
        ("backtest", "run the top-k trading protocol on the predictions"),
        ("eval-expr", "evaluate one formula and report its metrics"),
        ("report", "summarize predictions and backtest into markdown"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument("--output-dir", default=None, help="override paths.output_dir")
        p.add_argument("--jobs", type=int, default=None, help="worker pool cap")
        if name == "eval-expr":
            p.add_argument("expression", help="formula text, e.g. 'ts_mean(volume,5)'")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(
            args.config,
            overrides={"seed": args.seed, "output_dir": args.output_dir, "jobs": args.jobs},
        )
        if args.command == "gen-synth":
            cmd_gen_synth(cfg)
        elif args.command == "mine":
            cmd_mine(cfg)
        elif args.command == "combine":
            cmd_combine(cfg)
        elif args.command == "backtest":
            cmd_backtest(cfg)
        elif args.command == "eval-expr":
            cmd_eval_expr(cfg, args.expression)
        elif args.command == "report":
            cmd_report(cfg)
        return 0
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except AlphamineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
