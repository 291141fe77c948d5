"""Factor quality metrics: IC, RankIC, ICIR, zoo correlation and fitness.

IC is the time-series mean of the per-day cross-sectional Pearson
correlation between factor values and forward returns; RankIC replaces
each day's observations with average ranks first. ICIR divides IC by the
standard deviation of the daily IC series.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import GrammarError
from .evaluator import evaluate
from .expr import Expr, to_text
from .panel import PanelData
from .rpn import Vocabulary, from_onehot, rpn_decode


_TINY = 1e-9
_MIN_OBS = 3


@dataclass(frozen=True)
class FitnessConfig:
    """Qualification gate: correlation cap against the zoo plus IC/ICIR floors."""

    corr_cap: float = 0.7
    min_ic: float = 0.03
    min_icir: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.corr_cap <= 1.0:
            raise ValueError(f"corr_cap must be in (0, 1], got {self.corr_cap}")
        if self.min_ic < 0 or self.min_icir < 0:
            raise ValueError("min_ic and min_icir must be >= 0")


@dataclass(eq=False)
class FactorMetrics:
    ic: float
    rank_ic: float
    icir: float
    rank_icir: float
    ic_std: float
    rank_ic_std: float
    daily_ic: np.ndarray = field(repr=False)
    daily_rank_ic: np.ndarray = field(repr=False)
    n_days: int = 0


def daily_corr_series(values: np.ndarray, label: np.ndarray) -> np.ndarray:
    """Per-day Pearson correlation across stocks observed in both matrices.

    Days with fewer than 3 joint observations, or with cross-sectional std
    below 1e-9 on either side, are missing.
    """
    a = np.asarray(values, dtype=np.float64)
    b = np.asarray(label, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mask = np.isfinite(a) & np.isfinite(b)
    cnt = mask.sum(axis=1)
    safe = np.maximum(cnt, 1)
    af = np.where(mask, a, 0.0)
    bf = np.where(mask, b, 0.0)
    ma = af.sum(axis=1) / safe
    mb = bf.sum(axis=1) / safe
    da = np.where(mask, a - ma[:, None], 0.0)
    db = np.where(mask, b - mb[:, None], 0.0)
    saa = (da * da).sum(axis=1)
    sbb = (db * db).sum(axis=1)
    sab = (da * db).sum(axis=1)
    with np.errstate(all="ignore"):
        corr = sab / np.sqrt(saa * sbb)
        std_a = np.sqrt(saa / safe)
        std_b = np.sqrt(sbb / safe)
    corr[(cnt < _MIN_OBS) | (std_a < _TINY) | (std_b < _TINY)] = np.nan
    return corr


daily_ic_series = daily_corr_series


def daily_rank_ic_series(values: np.ndarray, label: np.ndarray) -> np.ndarray:
    """Per-day Pearson correlation of within-day average ranks."""
    a = np.asarray(values, dtype=np.float64)
    b = np.asarray(label, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    out = np.full(a.shape[0], np.nan)
    mask = np.isfinite(a) & np.isfinite(b)
    for t in range(a.shape[0]):
        idx = np.flatnonzero(mask[t])
        if idx.size < _MIN_OBS:
            continue
        ra = rankdata(a[t, idx])
        rb = rankdata(b[t, idx])
        da = ra - ra.mean()
        db = rb - rb.mean()
        saa = float(da @ da)
        sbb = float(db @ db)
        if np.sqrt(saa / idx.size) < _TINY or np.sqrt(sbb / idx.size) < _TINY:
            continue
        out[t] = float(da @ db) / np.sqrt(saa * sbb)
    return out


def _series_stats(series: np.ndarray):
    finite = series[np.isfinite(series)]
    if finite.size == 0:
        return np.nan, np.nan, np.nan
    mean = float(finite.mean())
    std = float(finite.std(ddof=1)) if finite.size > 1 else 0.0
    ratio = mean / std if std >= _TINY else np.nan
    return mean, std, ratio


def factor_metrics(
    values: np.ndarray,
    label: np.ndarray,
    days: np.ndarray | None = None,
    with_rank: bool = True,
) -> FactorMetrics:
    """IC/RankIC/ICIR/RankICIR restricted to the selected days (bool mask).

    with_rank=False skips the per-day ranking pass (the mining hot loop
    gates on IC/ICIR only) and leaves the rank fields missing.
    """
    daily = daily_corr_series(values, label)
    daily_rank = (
        daily_rank_ic_series(values, label)
        if with_rank
        else np.full(daily.shape, np.nan)
    )
    if days is not None:
        daily = np.where(days, daily, np.nan)
        daily_rank = np.where(days, daily_rank, np.nan)
    ic, ic_std, icir = _series_stats(daily)
    rank_ic, rank_ic_std, rank_icir = _series_stats(daily_rank)
    return FactorMetrics(
        ic=ic,
        rank_ic=rank_ic,
        icir=icir,
        rank_icir=rank_icir,
        ic_std=ic_std,
        rank_ic_std=rank_ic_std,
        daily_ic=daily,
        daily_rank_ic=daily_rank,
        n_days=int(np.isfinite(daily).sum()),
    )


def _member_values(zoo) -> list:
    if hasattr(zoo, "entries"):
        return [e.values for e in zoo.entries]
    return list(zoo)


def psi(values: np.ndarray, zoo, days: np.ndarray | None = None) -> float:
    """Max absolute mean daily correlation against any zoo member; 0 if empty."""
    worst = 0.0
    for member in _member_values(zoo):
        series = daily_corr_series(values, member)
        if days is not None:
            series = np.where(days, series, np.nan)
        finite = series[np.isfinite(series)]
        if finite.size == 0:
            continue
        worst = max(worst, abs(float(finite.mean())))
    return worst


def fitness_pi(
    x: np.ndarray,
    vocab: Vocabulary,
    zoo,
    panel: PanelData,
    days: np.ndarray | None = None,
    cfg: FitnessConfig = FitnessConfig(),
) -> float:
    """|IC| when x decodes to a fresh low-correlation factor, else 0.

    Total on any binary matrix: undecodable inputs, undefined IC and
    candidates correlated with the zoo at or above the cap all score 0.
    """
    try:
        expr = rpn_decode(from_onehot(x, vocab))
    except GrammarError:
        return 0.0
    if panel.label is None:
        raise ValueError("panel has no label; compute or plant one first")
    values = evaluate(expr, panel)
    series = daily_corr_series(values, panel.label)
    if days is not None:
        series = np.where(days, series, np.nan)
    finite = series[np.isfinite(series)]
    if finite.size == 0:
        return 0.0
    ic = float(finite.mean())
    if not np.isfinite(ic) or ic == 0.0:
        return 0.0
    if psi(values, zoo, days) >= cfg.corr_cap:
        return 0.0
    return abs(ic)


@dataclass
class QualifyResult:
    accepted: bool
    sign: int
    metrics: FactorMetrics
    psi: float
    reason: str


def qualify(
    expr: Expr,
    zoo,
    panel: PanelData,
    days: np.ndarray | None = None,
    cfg: FitnessConfig = FitnessConfig(),
    values: np.ndarray | None = None,
) -> QualifyResult:
    """Admission gate: IC and ICIR floors, zoo correlation cap, no duplicates.

    The returned sign is sign(IC): storing sign * factor makes every zoo
    member positively aligned with the label on its training range. A daily
    IC series with (near) zero std counts as passing the ICIR floor — the
    ratio diverges as the std vanishes.
    """
    if values is None:
        values = evaluate(expr, panel)
    m = factor_metrics(values, panel.label, days)
    sign = 1 if (np.isfinite(m.ic) and m.ic >= 0) else -1
    if not np.isfinite(m.ic):
        return QualifyResult(False, sign, m, 0.0, "IC undefined on the range")
    if abs(m.ic) < cfg.min_ic:
        return QualifyResult(False, sign, m, 0.0, f"|IC| {abs(m.ic):.4f} < {cfg.min_ic}")
    icir_ok = m.ic_std < _TINY or (np.isfinite(m.icir) and abs(m.icir) >= cfg.min_icir)
    if not icir_ok:
        return QualifyResult(False, sign, m, 0.0, f"|ICIR| {abs(m.icir):.4f} < {cfg.min_icir}")
    p = psi(values, zoo, days)
    if p >= cfg.corr_cap:
        return QualifyResult(False, sign, m, p, f"psi {p:.4f} >= {cfg.corr_cap}")
    texts = zoo.texts if hasattr(zoo, "texts") else set()
    if to_text(expr) in texts:
        return QualifyResult(False, sign, m, p, "duplicate expression")
    return QualifyResult(True, sign, m, p, "qualified")
