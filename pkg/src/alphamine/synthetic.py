"""Synthetic panels with a planted formulaic signal, for tests and demos."""

from __future__ import annotations

import datetime as dt
from typing import Sequence

import numpy as np

from .errors import DataError
from .evaluator import cross_sectional_zscore, evaluate
from .expr import parse_text
from .panel import PanelData

_START = dt.date(2015, 1, 5)  # a Monday


def trading_days(n_days: int, start: dt.date = _START) -> list:
    """n consecutive weekdays from start."""
    days = []
    day = start
    while len(days) < n_days:
        if day.weekday() < 5:
            days.append(day)
        day += dt.timedelta(days=1)
    return days


def make_synthetic(
    n_stocks: int,
    n_days: int,
    planted_exprs: Sequence[str] = (),
    weights: Sequence[float] = (),
    noise_std: float = 0.0,
    seed: int = 0,
) -> PanelData:
    """Random-walk prices and log-normal volume, label planted from formulas.

    The label is the per-day z-score of ``sum_j weights[j] * z(f_j) + eps``
    where each f_j is the evaluated planted expression, z is the per-day
    cross-sectional z-score and eps ~ N(0, noise_std^2). With no planted
    expressions the label is pure noise. Deterministic for a fixed seed.
    """
    if len(planted_exprs) != len(weights):
        raise DataError(
            f"{len(planted_exprs)} planted expression(s) but {len(weights)} weight(s)"
        )
    exprs = [parse_text(s) for s in planted_exprs]  # grammar errors propagate

    rng = np.random.default_rng(seed)
    log_close = np.log(100.0) + np.cumsum(rng.normal(0.0, 0.02, (n_days, n_stocks)), axis=0)
    close = np.exp(log_close)
    open_ = close * np.exp(rng.normal(0.0, 0.01, close.shape))
    half_spread = np.abs(rng.normal(0.0, 0.01, close.shape)) + 1e-4
    high = np.maximum(open_, close) * np.exp(half_spread)
    low = np.minimum(open_, close) * np.exp(-half_spread)
    vwap = low * (high / low) ** rng.uniform(0.0, 1.0, close.shape)
    volume = np.exp(rng.normal(14.0, 1.0, close.shape))

    panel = PanelData(
        trading_days(n_days),
        [f"S{i:03d}" for i in range(n_stocks)],
        {"open": open_, "high": high, "low": low, "close": close, "volume": volume, "vwap": vwap},
    )

    raw = np.zeros((n_days, n_stocks))
    for expr, w in zip(exprs, weights):
        raw = raw + w * cross_sectional_zscore(evaluate(expr, panel))
    noise = rng.normal(0.0, 1.0, raw.shape)
    label = cross_sectional_zscore(raw + noise_std * noise)
    return panel.with_label(label)
