"""Run configuration: a YAML file with one section per pipeline stage.

All validation problems are collected and reported together rather than
first-failure. Every stochastic stage draws its seed from the single
global seed through a named substream, so one number pins down the whole
pipeline.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .backtest import BacktestConfig
from .combiner import CombinerConfig
from .errors import ConfigError
from .metrics import FitnessConfig
from .miner import MinerConfig
from .panel import DateRange

_SUBSTREAMS = {"synthetic": 1, "miner": 2, "combiner": 3, "backtest": 4}


def substream_seed(seed: int, name: str) -> int:
    """Derived 32-bit seed for a named pipeline stage."""
    idx = _SUBSTREAMS[name]
    return int(np.random.SeedSequence([int(seed), idx]).generate_state(1)[0])


def substream_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _SUBSTREAMS[name]]))


@dataclass
class SyntheticConfig:
    n_stocks: int = 20
    n_days: int = 500
    planted_exprs: list = field(default_factory=lambda: ["ts_mean(volume,5)"])
    weights: list = field(default_factory=lambda: [1.0])
    noise_std: float = 0.3


@dataclass
class RunConfig:
    seed: int
    panel_path: Path
    zoo_path: Path
    output_dir: Path
    train_range: DateRange | None
    valid_range: DateRange | None
    test_range: DateRange | None
    horizon: int
    lag: int
    max_len: int
    windows: list | None
    constants: list | None
    fitness: FitnessConfig
    miner: MinerConfig
    combiner: CombinerConfig
    backtest: BacktestConfig
    synthetic: SyntheticConfig
    jobs: int = 1


def _date(value, where, problems):
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError:
        problems.append(f"{where}: bad date {value!r}")
        return None


def _range(section, name, problems):
    if not section:
        return None
    if not isinstance(section, dict) or "start" not in section or "end" not in section:
        problems.append(f"ranges.{name}: expected {{start, end}}")
        return None
    start = _date(section["start"], f"ranges.{name}.start", problems)
    end = _date(section["end"], f"ranges.{name}.end", problems)
    if start is None or end is None:
        return None
    if start > end:
        problems.append(f"ranges.{name}: start {start} is after end {end}")
        return None
    return DateRange(start, end)


def _take(section: dict, where: str, types: dict, problems: list) -> dict:
    out = {}
    for key, value in section.items():
        if key not in types:
            problems.append(f"{where}.{key}: unknown option")
            continue
        want = types[key]
        if want is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, want):
            problems.append(
                f"{where}.{key}: expected {want.__name__ if isinstance(want, type) else want},"
                f" got {value!r}"
            )
            continue
        out[key] = value
    return out


_MINER_FIELDS = {
    "target_factors": int, "library_size": int, "epochs_per_round": int,
    "predictor_epochs": int, "batch_size": int, "latent_dim": int,
    "lambda_onehot": float, "lambda_hidden": float, "temperature": float,
    "learning_rate": float, "max_rounds": int, "library_cap": int,
}
_COMBINER_FIELDS = {
    "max_factors": int, "window": int, "min_ic": float, "min_icir": float,
    "ridge": float,
}
_BACKTEST_FIELDS = {"top_k": int, "max_changes": int, "cost_bps": float, "price_field": str}
_FITNESS_FIELDS = {"corr_cap": float, "min_ic": float, "min_icir": float}
_DATASET_FIELDS = {"horizon": int, "lag": int}
_DSL_FIELDS = {"max_len": int, "windows": list, "constants": list}
_SYNTH_FIELDS = {
    "n_stocks": int, "n_days": int, "planted": list, "noise_std": float,
}


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a YAML run configuration.

    Raises ConfigError carrying the complete list of problems.
    """
    path = Path(path)
    problems: list = []
    if not path.exists():
        raise ConfigError([f"config file {path} does not exist"])
    try:
        doc = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"config file is not valid YAML: {exc}"]) from None
    if not isinstance(doc, dict):
        raise ConfigError(["config root must be a mapping"])

    known = {"seed", "paths", "ranges", "dataset", "dsl", "fitness", "miner",
             "combiner", "backtest", "synthetic"}
    for key in doc:
        if key not in known:
            problems.append(f"{key}: unknown section")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        problems.append(f"seed: expected an integer, got {seed!r}")
        seed = 0

    paths = doc.get("paths") or {}
    if not isinstance(paths, dict):
        problems.append("paths: expected a mapping")
        paths = {}
    base = path.parent
    panel_path = base / str(paths.get("panel", "panel.csv"))
    zoo_path = base / str(paths.get("zoo", "zoo.json"))
    output_dir = base / str(paths.get("output_dir", "out"))

    ranges = doc.get("ranges") or {}
    if not isinstance(ranges, dict):
        problems.append("ranges: expected a mapping")
        ranges = {}
    train = _range(ranges.get("train"), "train", problems)
    valid = _range(ranges.get("valid"), "valid", problems)
    test = _range(ranges.get("test"), "test", problems)
    ordered = [r for r in (train, valid, test) if r is not None]
    for a, b in zip(ordered, ordered[1:]):
        if a.end >= b.start:
            problems.append(
                f"ranges must be ordered and non-overlapping: "
                f"{a.start}..{a.end} overlaps or follows {b.start}..{b.end}"
            )

    dataset = _take(doc.get("dataset") or {}, "dataset", _DATASET_FIELDS, problems)
    dsl = _take(doc.get("dsl") or {}, "dsl", _DSL_FIELDS, problems)
    fitness_kw = _take(doc.get("fitness") or {}, "fitness", _FITNESS_FIELDS, problems)
    miner_kw = _take(doc.get("miner") or {}, "miner", _MINER_FIELDS, problems)
    combiner_kw = _take(doc.get("combiner") or {}, "combiner", _COMBINER_FIELDS, problems)
    backtest_kw = _take(doc.get("backtest") or {}, "backtest", _BACKTEST_FIELDS, problems)
    synth_raw = _take(doc.get("synthetic") or {}, "synthetic", _SYNTH_FIELDS, problems)

    overrides = overrides or {}
    if overrides.get("seed") is not None:
        seed = int(overrides["seed"])
    if overrides.get("output_dir") is not None:
        output_dir = Path(overrides["output_dir"])
    jobs = int(overrides.get("jobs") or 1)

    horizon = dataset.get("horizon", 21)
    lag = dataset.get("lag", 1)
    if horizon < 1:
        problems.append("dataset.horizon: must be >= 1")
    if not 0 <= lag < max(horizon, 1):
        problems.append("dataset.lag: must satisfy 0 <= lag < horizon")

    planted = synth_raw.pop("planted", None)
    synth = SyntheticConfig(
        n_stocks=synth_raw.get("n_stocks", 20),
        n_days=synth_raw.get("n_days", 500),
        noise_std=synth_raw.get("noise_std", 0.3),
    )
    if planted is not None:
        exprs, weights = [], []
        for i, item in enumerate(planted):
            if not isinstance(item, dict) or "expr" not in item:
                problems.append(f"synthetic.planted[{i}]: expected {{expr, weight}}")
                continue
            exprs.append(str(item["expr"]))
            weights.append(float(item.get("weight", 1.0)))
        synth.planted_exprs, synth.weights = exprs, weights

    def build(factory, kwargs, where):
        try:
            return factory(**kwargs)
        except (ValueError, TypeError) as exc:
            problems.append(f"{where}: {exc}")
            return factory()

    fitness = build(FitnessConfig, fitness_kw, "fitness")
    miner = build(
        MinerConfig,
        dict(
            miner_kw,
            fitness=fitness,
            max_len=dsl.get("max_len", 20),
            seed=substream_seed(seed, "miner"),
            jobs=jobs,
        ),
        "miner",
    )
    combiner = build(CombinerConfig, dict(combiner_kw, horizon=horizon, lag=lag), "combiner")
    backtest = build(BacktestConfig, backtest_kw, "backtest")

    if problems:
        raise ConfigError(problems)

    return RunConfig(
        seed=seed,
        panel_path=panel_path,
        zoo_path=zoo_path,
        output_dir=output_dir,
        train_range=train,
        valid_range=valid,
        test_range=test,
        horizon=horizon,
        lag=lag,
        max_len=dsl.get("max_len", 20),
        windows=dsl.get("windows"),
        constants=dsl.get("constants"),
        fitness=fitness,
        miner=miner,
        combiner=combiner,
        backtest=backtest,
        synthetic=synth,
        jobs=jobs,
    )
