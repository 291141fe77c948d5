"""Simulated trading: hold the top-k scored names, cap daily replacements.

Day one buys the top_k names by score. Every later day the current book is
re-ranked; up to max_changes holdings that fell out of the top_k are sold
(worst-ranked first) and replaced one-for-one by the best-ranked names not
yet held. Execution happens at the next day's price, so the return booked
for decision day t is the equal-weighted move from price(t+1) to
price(t+2). One replacement (a sell paired with a buy) counts as one unit
of turnover; costs apply to both legs of the traded fraction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .panel import PanelData

_SVG_W, _SVG_H, _SVG_PAD = 720, 360, 40


@dataclass(frozen=True)
class BacktestConfig:
    top_k: int = 50
    max_changes: int = 5
    cost_bps: float = 0.0
    price_field: str = "vwap"

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.max_changes < 0:
            raise ValueError("max_changes must be >= 0")
        if self.cost_bps < 0:
            raise ValueError("cost_bps must be >= 0")


@dataclass
class BacktestResult:
    dates: list
    holdings: list
    daily_return: np.ndarray
    turnover: np.ndarray
    cum_return: np.ndarray
    benchmark_return: np.ndarray
    excess_return: np.ndarray
    flags: list = field(default_factory=list)


def _rank_order(scores_row: np.ndarray, symbols) -> list:
    """Symbols with a finite score, best first; ties broken by symbol."""
    scored = [(float(-scores_row[i]), sym) for i, sym in enumerate(symbols)
              if np.isfinite(scores_row[i])]
    scored.sort()
    return [sym for _, sym in scored]


def run_backtest(scores: np.ndarray, panel: PanelData, cfg: BacktestConfig = BacktestConfig()):
    """Run the protocol over every panel day carrying at least one score.

    A held name with a missing execution price is carried at zero return
    that day and noted in result.flags.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (panel.n_days, panel.n_symbols):
        raise DataError(
            f"scores shape {scores.shape} does not match panel {(panel.n_days, panel.n_symbols)}"
        )
    if cfg.price_field not in panel.features:
        raise DataError(f"unknown execution price field {cfg.price_field!r}")
    px = panel.features[cfg.price_field]
    T, n = px.shape
    # next-period return of decision day t: price(t+1) -> price(t+2)
    step = np.full((T, n), np.nan)
    if T >= 3:
        with np.errstate(all="ignore"):
            step[: T - 2] = px[2:] / px[1:-1] - 1.0
    step[~np.isfinite(step)] = np.nan

    decision_days = [t for t in range(T) if np.any(np.isfinite(scores[t]))]
    if not decision_days:
        raise DataError("scores carry no finite entries")

    sym_pos = {s: i for i, s in enumerate(panel.symbols)}
    holdings: list = []
    held: set = set()
    dates, daily_ret, turnover, bench = [], [], [], []
    flags: list = []

    for day_no, t in enumerate(decision_days):
        order = _rank_order(scores[t], panel.symbols)
        rank = {sym: r for r, sym in enumerate(order)}
        top = set(order[: cfg.top_k])
        if day_no == 0:
            held = set(order[: cfg.top_k])
            changed = 0
        else:
            outs = sorted(
                (s for s in held if s not in top),
                key=lambda s: (-rank.get(s, n), s),
            )
            ins = [s for s in order if s not in held]
            changed = min(len(outs), len(ins), cfg.max_changes)
            for sym_out, sym_in in zip(outs[:changed], ins[:changed]):
                held.discard(sym_out)
                held.add(sym_in)

        book = sorted(held)
        rets = np.empty(len(book))
        for j, sym in enumerate(book):
            r = step[t, sym_pos[sym]]
            if math.isnan(r):
                flags.append(f"{panel.dates[t].isoformat()}: {sym} missing execution price, carried at 0")
                rets[j] = 0.0
            else:
                rets[j] = r
        cost = cfg.cost_bps * 1e-4 * (2.0 * changed / cfg.top_k)
        day_return = float(np.mean(rets)) - cost if book else 0.0

        universe = step[t][np.isfinite(step[t])]
        bench_return = float(np.mean(universe)) if universe.size else 0.0

        dates.append(panel.dates[t])
        holdings.append(tuple(book))
        daily_ret.append(day_return)
        turnover.append(changed)
        bench.append(bench_return)

    daily_ret = np.array(daily_ret)
    bench = np.array(bench)
    return BacktestResult(
        dates=dates,
        holdings=holdings,
        daily_return=daily_ret,
        turnover=np.array(turnover, dtype=np.int64),
        cum_return=np.cumprod(1.0 + daily_ret) - 1.0,
        benchmark_return=bench,
        excess_return=daily_ret - bench,
        flags=flags,
    )


def write_backtest_csv(result: BacktestResult, path, stamp: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if stamp:
            fh.write(f"# generated-at: {stamp}\n")
        writer = csv.writer(fh)
        writer.writerow(["date", "return", "cum_return", "turnover", "excess_return"])
        for i, day in enumerate(result.dates):
            writer.writerow(
                [
                    day.isoformat(),
                    repr(float(result.daily_return[i])),
                    repr(float(result.cum_return[i])),
                    int(result.turnover[i]),
                    repr(float(result.excess_return[i])),
                ]
            )


def write_equity_svg(result: BacktestResult, path) -> None:
    """Minimal self-contained equity-curve plot (cumulative return vs time)."""
    values = np.concatenate([[0.0], result.cum_return])
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-12:
        hi = lo + 1e-12
    width = _SVG_W - 2 * _SVG_PAD
    height = _SVG_H - 2 * _SVG_PAD
    points = []
    for i, v in enumerate(values):
        x = _SVG_PAD + width * i / (len(values) - 1 if len(values) > 1 else 1)
        y = _SVG_PAD + height * (1.0 - (v - lo) / (hi - lo))
        points.append(f"{x:.2f},{y:.2f}")
    zero_y = _SVG_PAD + height * (1.0 - (0.0 - lo) / (hi - lo))
    first = result.dates[0].isoformat() if result.dates else ""
    last = result.dates[-1].isoformat() if result.dates else ""
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}">\n'
        f'<rect width="100%" height="100%" fill="white"/>\n'
        f'<line x1="{_SVG_PAD}" y1="{zero_y:.2f}" x2="{_SVG_W - _SVG_PAD}" y2="{zero_y:.2f}" '
        f'stroke="#999" stroke-dasharray="4"/>\n'
        f'<polyline fill="none" stroke="#1f6feb" stroke-width="1.5" '
        f'points="{" ".join(points)}"/>\n'
        f'<text x="{_SVG_PAD}" y="{_SVG_H - 10}" font-size="11">{first}</text>\n'
        f'<text x="{_SVG_W - _SVG_PAD}" y="{_SVG_H - 10}" font-size="11" '
        f'text-anchor="end">{last}</text>\n'
        f'<text x="{_SVG_PAD}" y="{_SVG_PAD - 10}" font-size="11">'
        f"cumulative return {result.cum_return[-1] * 100:.2f}%</text>\n"
        f"</svg>\n"
    )
    with open(path, "w") as fh:
        fh.write(svg)
