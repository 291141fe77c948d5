"""Daily re-selection and linear re-weighting of zoo factors into one signal.

Every trading day the zoo is re-scored on a trailing window of realized
labels, filtered by trailing IC/ICIR floors, and the top-N survivors are
combined by a ridge fit on the same window. Selection, weights and even
membership can change day to day. The window ends horizon+lag days before
the decision day so every label used in the fit is observable by then.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError
from .evaluator import cross_sectional_zscore
from .metrics import daily_corr_series, factor_metrics
from .panel import DateRange, PanelData
from .zoo import FactorZoo

_TINY = 1e-9


@dataclass(frozen=True)
class CombinerConfig:
    max_factors: int = 10
    window: int = 120
    min_ic: float = 0.01
    min_icir: float = 0.05
    ridge: float = 1e-4
    horizon: int = 21
    lag: int = 1

    def __post_init__(self):
        problems = []
        if self.max_factors < 1:
            problems.append("max_factors must be >= 1")
        if self.ridge < 0:
            problems.append("ridge must be >= 0")
        if self.window <= self.horizon + self.lag:
            problems.append(
                f"window ({self.window}) must exceed horizon+lag "
                f"({self.horizon}+{self.lag}) so the fit window holds realized labels"
            )
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class SnapshotEntry:
    factor_id: int
    expr: str
    weight: float


@dataclass
class MegaAlphaSnapshot:
    date: dt.date
    entries: list
    intercept: float
    diagnostics: dict = field(default_factory=dict)


class _ZooCache:
    """Per-entry signed values, daily IC series and z-scored design columns."""

    def __init__(self, zoo: FactorZoo, panel: PanelData):
        if panel.label is None:
            raise DataError("panel has no label; compute one before combining")
        shape = (panel.n_days, panel.n_symbols)
        if any(e.values is None or e.values.shape != shape for e in zoo.entries):
            zoo = zoo.revalue(panel)
        self.entries = zoo.entries
        self.pos = {e.factor_id: i for i, e in enumerate(self.entries)}
        self.signed = [e.sign * e.values for e in self.entries]
        self.daily_ic = [daily_corr_series(v, panel.label) for v in self.signed]
        self.zscored = [cross_sectional_zscore(v) for v in self.signed]


def _trailing_stats(series: np.ndarray, lo: int, hi: int):
    window = series[lo : hi + 1]
    finite = window[np.isfinite(window)]
    if finite.size == 0:
        return math.nan, math.nan
    ic = float(finite.mean())
    std = float(finite.std(ddof=1)) if finite.size > 1 else 0.0
    if std < _TINY:
        icir = math.inf if ic > 0 else -math.inf if ic < 0 else math.nan
    else:
        icir = ic / std
    return ic, icir


def _window_bounds(panel: PanelData, day: dt.date, cfg: CombinerConfig):
    it = panel.date_index(day)
    lo = it - cfg.window
    hi = it - cfg.horizon - cfg.lag
    if lo < 0:
        raise DataError(
            f"{day} needs {cfg.window} preceding panel days for the trailing window"
        )
    return it, lo, hi


def select_factors_at(day: dt.date, zoo: FactorZoo, panel: PanelData, cfg: CombinerConfig):
    """Top-N zoo factors by trailing IC over the realized window before day.

    Returns [(entry, trailing_ic, trailing_icir)] sorted by IC descending,
    ties by factor id; only factors above both floors survive. May be empty.
    """
    cache = _ZooCache(zoo, panel)
    _, lo, hi = _window_bounds(panel, day, cfg)
    return _select(cache, lo, hi, cfg)


def _select(cache: _ZooCache, lo: int, hi: int, cfg: CombinerConfig):
    picked = []
    for entry, series in zip(cache.entries, cache.daily_ic):
        ic, icir = _trailing_stats(series, lo, hi)
        if math.isfinite(ic) and ic > cfg.min_ic and icir > cfg.min_icir:
            picked.append((entry, ic, icir))
    picked.sort(key=lambda item: (-item[1], item[0].factor_id))
    return picked[: cfg.max_factors]


def _fit(cache: _ZooCache, selection, lo: int, hi: int, it: int,
         panel: PanelData, cfg: CombinerConfig, day: dt.date):
    n = panel.n_symbols
    if not selection:
        return np.full(n, np.nan), MegaAlphaSnapshot(day, [], math.nan)

    cols = [cache.zscored[cache.pos[entry.factor_id]] for entry, _, _ in selection]
    X = np.stack([c[lo : hi + 1].ravel() for c in cols], axis=1)
    y = panel.label[lo : hi + 1].ravel()
    valid = np.isfinite(y) & np.all(np.isfinite(X), axis=1)
    if not valid.any():
        return np.full(n, np.nan), MegaAlphaSnapshot(day, [], math.nan)
    X, y = X[valid], y[valid]

    xm = X.mean(axis=0)
    ym = y.mean()
    Xc = X - xm
    yc = y - ym
    rank_deficient = False
    k = X.shape[1]
    if cfg.ridge > 0:
        w = np.linalg.solve(Xc.T @ Xc + cfg.ridge * np.eye(k), Xc.T @ yc)
    else:
        w, _, rank, _ = np.linalg.lstsq(Xc, yc, rcond=None)
        rank_deficient = rank < k
    intercept = float(ym - xm @ w)

    day_cols = np.stack([c[it] for c in cols], axis=1)  # (n, k)
    pred = intercept + day_cols @ w
    pred[~np.all(np.isfinite(day_cols), axis=1)] = np.nan

    snapshot = MegaAlphaSnapshot(
        day,
        [SnapshotEntry(e.factor_id, e.text, float(wj)) for (e, _, _), wj in zip(selection, w)],
        intercept,
        diagnostics={
            "trailing": {e.factor_id: {"ic": ic, "icir": icir} for e, ic, icir in selection},
            "rank_deficient": rank_deficient,
            "fit_rows": int(valid.sum()),
        },
    )
    return pred, snapshot


def fit_predict_day(day: dt.date, selection, zoo: FactorZoo, panel: PanelData,
                    cfg: CombinerConfig):
    """Ridge-fit the selected factors on the realized window and predict day.

    Factor columns are the per-day cross-sectional z-scores pooled over the
    window; rows with any missing value are excluded. The intercept is not
    penalized. With ridge = 0 a rank-deficient design falls back to the
    minimum-norm solution and is flagged in the snapshot diagnostics.
    """
    cache = _ZooCache(zoo, panel)
    it, lo, hi = _window_bounds(panel, day, cfg)
    keyed = []
    for item in selection:
        entry = item[0] if isinstance(item, tuple) else item
        entry = cache.entries[cache.pos[entry.factor_id]]
        ic, icir = _trailing_stats(cache.daily_ic[cache.pos[entry.factor_id]], lo, hi)
        keyed.append((entry, ic, icir))
    return _fit(cache, keyed, lo, hi, it, panel, cfg, day)


def run_combination(zoo: FactorZoo, panel: PanelData, test_range: DateRange,
                    cfg: CombinerConfig = CombinerConfig()):
    """Daily select + fit + predict over the range.

    Returns (scores, snapshots): scores is a full (T, n) matrix, NaN outside
    the range, plus one snapshot per day.
    """
    cache = _ZooCache(zoo, panel)
    days = panel.day_mask(test_range)
    scores = np.full((panel.n_days, panel.n_symbols), np.nan)
    snapshots = []
    for it in np.flatnonzero(days):
        day = panel.dates[it]
        _, lo, hi = _window_bounds(panel, day, cfg)
        selection = _select(cache, lo, hi, cfg)
        pred, snap = _fit(cache, selection, lo, hi, it, panel, cfg, day)
        scores[it] = pred
        snapshots.append(snap)
    return scores, snapshots


def run_static_combination(zoo: FactorZoo, panel: PanelData, test_range: DateRange,
                           cfg: CombinerConfig = CombinerConfig()):
    """Fixed-weight ablation: select and fit once on the first test day's
    window, then apply that snapshot to every day of the range."""
    cache = _ZooCache(zoo, panel)
    days = panel.day_mask(test_range)
    idx = np.flatnonzero(days)
    scores = np.full((panel.n_days, panel.n_symbols), np.nan)
    snapshots = []
    first = panel.dates[idx[0]]
    _, lo, hi = _window_bounds(panel, first, cfg)
    selection = _select(cache, lo, hi, cfg)
    for it in idx:
        day = panel.dates[it]
        pred, snap = _fit(cache, selection, lo, hi, it, panel, cfg, day)
        scores[it] = pred
        snapshots.append(snap)
    return scores, snapshots


def pool_size_sweep(zoo: FactorZoo, panel: PanelData, test_range: DateRange,
                    cfg: CombinerConfig, sizes=(1, 10, 20, 50, 100)):
    """Mean test IC of the combined signal for each factor-pool cap."""
    out = []
    days = panel.day_mask(test_range)
    for n in sizes:
        scores, _ = run_combination(zoo, panel, test_range, replace(cfg, max_factors=n))
        out.append((int(n), factor_metrics(scores, panel.label, days).ic))
    return out


# -- IO -----------------------------------------------------------------------


def write_predictions_csv(scores: np.ndarray, panel: PanelData, path,
                          stamp: str | None = None) -> None:
    """date,symbol,score rows for every day carrying at least one score."""
    with open(path, "w", newline="") as fh:
        if stamp:
            fh.write(f"# generated-at: {stamp}\n")
        writer = csv.writer(fh)
        writer.writerow(["date", "symbol", "score"])
        for t, day in enumerate(panel.dates):
            if not np.any(np.isfinite(scores[t])):
                continue
            for i, sym in enumerate(panel.symbols):
                x = scores[t, i]
                writer.writerow(
                    [day.isoformat(), sym, "" if not np.isfinite(x) else repr(float(x))]
                )


def load_predictions_csv(path, panel: PanelData) -> np.ndarray:
    scores = np.full((panel.n_days, panel.n_symbols), np.nan)
    sym_pos = {s: i for i, s in enumerate(panel.symbols)}
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            day = dt.date.fromisoformat(row["date"])
            sym = row["symbol"]
            if sym not in sym_pos:
                raise DataError(f"prediction symbol {sym} not in panel")
            raw = row["score"].strip()
            if raw:
                scores[panel.date_index(day), sym_pos[sym]] = float(raw)
    return scores


def _json_num(x):
    x = float(x)
    return None if not math.isfinite(x) else x


def write_snapshots_jsonl(snapshots, path, stamp: str | None = None) -> None:
    """One JSON object per day: {date, entries: [{id, expr, weight}], intercept}."""
    with open(path, "w") as fh:
        if stamp:
            fh.write(f"# generated-at: {stamp}\n")
        for snap in snapshots:
            doc = {
                "date": snap.date.isoformat(),
                "entries": [
                    {"id": e.factor_id, "expr": e.expr, "weight": _json_num(e.weight)}
                    for e in snap.entries
                ],
                "intercept": _json_num(snap.intercept),
            }
            fh.write(json.dumps(doc) + "\n")
