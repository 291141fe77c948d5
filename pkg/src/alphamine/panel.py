"""Panel data container, CSV IO and forward-return labelling.

A panel holds the six raw daily features (open, high, low, close, volume,
vwap) as aligned date x symbol float64 matrices, plus an optional label
matrix of forward returns. Missing entries are NaN and every operation in
the package propagates them explicitly.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    DuplicateRowError,
    InsufficientDataError,
    RowParseError,
)

FEATURES = ("open", "high", "low", "close", "volume", "vwap")
PRICE_FEATURES = ("open", "high", "low", "close", "vwap")
CSV_COLUMNS = ("date", "symbol") + FEATURES

DEFAULT_LABEL_HORIZON = 21
DEFAULT_ENTRY_LAG = 1

_DENOM_GUARD = 1e-9


@dataclass(frozen=True, order=True)
class DateRange:
    """Inclusive range of trading days."""

    start: dt.date
    end: dt.date

    def __post_init__(self):
        if self.start > self.end:
            raise DataError(f"date range start {self.start} is after end {self.end}")

    def contains(self, day: dt.date) -> bool:
        return self.start <= day <= self.end


class PanelData:
    """Immutable date x symbol matrices of raw features plus the label.

    All matrices share shape ``(T, n)`` where ``T = len(dates)`` and
    ``n = len(symbols)``. Arrays are flagged read-only so a panel can be
    shared freely across parallel workers.
    """

    def __init__(
        self,
        dates: Sequence[dt.date],
        symbols: Sequence[str],
        features: Mapping[str, np.ndarray],
        label: np.ndarray | None = None,
    ):
        self.dates = tuple(dates)
        self.symbols = tuple(symbols)
        self.features = {name: np.asarray(m, dtype=np.float64) for name, m in features.items()}
        self.label = None if label is None else np.asarray(label, dtype=np.float64)
        self._validate()
        for m in self.features.values():
            m.setflags(write=False)
        if self.label is not None:
            self.label.setflags(write=False)
        self._date_index = {d: i for i, d in enumerate(self.dates)}

    # -- construction checks -------------------------------------------------

    def _validate(self):
        if not self.dates:
            raise DataError("panel has no dates")
        if not self.symbols:
            raise DataError("panel has no symbols")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("panel dates must be strictly increasing")
        if len(set(self.symbols)) != len(self.symbols):
            raise DataError("panel symbols contain duplicates")
        missing = [f for f in FEATURES if f not in self.features]
        if missing:
            raise DataError(f"panel is missing features: {missing}")
        extra = [f for f in self.features if f not in FEATURES]
        if extra:
            raise DataError(f"panel has unknown features: {extra}")
        shape = (len(self.dates), len(self.symbols))
        for name, m in self.features.items():
            if m.shape != shape:
                raise DataError(f"feature {name} has shape {m.shape}, expected {shape}")
        if self.label is not None and self.label.shape != shape:
            raise DataError(f"label has shape {self.label.shape}, expected {shape}")
        with np.errstate(invalid="ignore"):
            vol = self.features["volume"]
            if bool(np.any(vol[np.isfinite(vol)] < 0)):
                raise DataError("volume must be >= 0 wherever present")
            for name in PRICE_FEATURES:
                px = self.features[name]
                if bool(np.any(px[np.isfinite(px)] <= 0)):
                    raise DataError(f"{name} must be > 0 wherever present")

    # -- basic accessors -----------------------------------------------------

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_symbols(self) -> int:
        return len(self.symbols)

    def date_index(self, day: dt.date) -> int:
        try:
            return self._date_index[day]
        except KeyError:
            raise DataError(f"date {day} is not on the panel's date axis") from None

    def day_mask(self, date_range: DateRange | None) -> np.ndarray:
        """Boolean mask over the date axis selecting days inside the range."""
        if date_range is None:
            return np.ones(self.n_days, dtype=bool)
        if date_range.start not in self._date_index or date_range.end not in self._date_index:
            raise DataError(
                f"range {date_range.start}..{date_range.end} endpoints must be panel dates"
            )
        mask = np.zeros(self.n_days, dtype=bool)
        mask[self.date_index(date_range.start) : self.date_index(date_range.end) + 1] = True
        return mask

    def with_label(self, label: np.ndarray) -> "PanelData":
        return PanelData(self.dates, self.symbols, self.features, label)

    def truncated(self, last_day: dt.date) -> "PanelData":
        """Copy containing only rows dated <= last_day (label rows included)."""
        k = self.date_index(last_day) + 1
        feats = {name: m[:k] for name, m in self.features.items()}
        label = None if self.label is None else self.label[:k]
        return PanelData(self.dates[:k], self.symbols, feats, label)


def compute_label(
    panel: PanelData,
    horizon: int = DEFAULT_LABEL_HORIZON,
    lag: int = DEFAULT_ENTRY_LAG,
) -> PanelData:
    """Attach the forward return label vwap(t+horizon)/vwap(t+lag) - 1.

    Entries are missing wherever either vwap falls off the panel end or is
    itself missing. The (21, 1) default matches a 21-day holding horizon
    entered with a one-day execution lag.
    """
    if horizon < 1:
        raise DataError(f"label horizon must be >= 1, got {horizon}")
    if lag < 0 or lag >= horizon:
        raise DataError(f"entry lag must satisfy 0 <= lag < horizon, got {lag}")
    vwap = panel.features["vwap"]
    T, n = vwap.shape
    label = np.full((T, n), np.nan)
    if T > horizon:
        num = vwap[horizon:, :]
        den = vwap[lag : T - horizon + lag, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            out = num / den - 1.0
        out[~np.isfinite(out)] = np.nan
        bad = np.isfinite(den) & (np.abs(den) < _DENOM_GUARD)
        out[bad] = np.nan
        label[: T - horizon, :] = out
    return panel.with_label(label)


# -- CSV IO -------------------------------------------------------------------


def _fmt(value: float) -> str:
    return "" if math.isnan(value) else repr(float(value))


def save_panel(panel: PanelData, path) -> None:
    """Write the panel as CSV; appends a label column when one is present."""
    header = list(CSV_COLUMNS)
    if panel.label is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t, day in enumerate(panel.dates):
            for i, sym in enumerate(panel.symbols):
                row = [day.isoformat(), sym]
                row += [_fmt(panel.features[f][t, i]) for f in FEATURES]
                if panel.label is not None:
                    row.append(_fmt(panel.label[t, i]))
                writer.writerow(row)


def load_panel(path, schema: Mapping[str, str] | None = None) -> PanelData:
    """Load a panel from CSV.

    Args:
        path: CSV file with columns date, symbol, open, high, low, close,
            volume, vwap and optionally label; one row per (date, symbol).
        schema: optional map from canonical column names to names used in
            the file, e.g. ``{"vwap": "avg_price"}``.

    Raises:
        RowParseError: a malformed row, with its line number.
        DuplicateRowError: repeated (date, symbol) pair.
        InsufficientDataError: fewer than two dates or two symbols.
    """
    schema = dict(schema or {})
    col_name = {canon: schema.get(canon, canon) for canon in CSV_COLUMNS + ("label",)}

    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise InsufficientDataError(f"{path} is empty") from None
        positions = {}
        for canon in CSV_COLUMNS:
            name = col_name[canon]
            if name not in header:
                raise DataError(f"{path} is missing required column {name!r}")
            positions[canon] = header.index(name)
        has_label = col_name["label"] in header
        if has_label:
            positions["label"] = header.index(col_name["label"])

        rows = []
        seen = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < len(header):
                raise RowParseError(line_no, f"expected {len(header)} fields, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[positions["date"]].strip())
            except ValueError as exc:
                raise RowParseError(line_no, f"bad date: {exc}") from None
            sym = row[positions["symbol"]].strip()
            if not sym:
                raise RowParseError(line_no, "empty symbol")
            key = (day, sym)
            if key in seen:
                raise DuplicateRowError(day.isoformat(), sym, line_no)
            seen[key] = line_no
            values = {}
            for canon in FEATURES + (("label",) if has_label else ()):
                raw = row[positions[canon]].strip()
                if raw == "":
                    values[canon] = math.nan
                    continue
                try:
                    values[canon] = float(raw)
                except ValueError:
                    raise RowParseError(line_no, f"bad number {raw!r} in column {canon}") from None
            rows.append((day, sym, values))

    dates = sorted({day for day, _, _ in rows})
    symbols = sorted({sym for _, sym, _ in rows})
    if len(dates) < 2 or len(symbols) < 2:
        raise InsufficientDataError(
            f"{path} has {len(dates)} date(s) and {len(symbols)} symbol(s); need at least 2 of each"
        )

    date_pos = {d: i for i, d in enumerate(dates)}
    sym_pos = {s: i for i, s in enumerate(symbols)}
    features = {f: np.full((len(dates), len(symbols)), np.nan) for f in FEATURES}
    label = np.full((len(dates), len(symbols)), np.nan) if has_label else None
    for day, sym, values in rows:
        t, i = date_pos[day], sym_pos[sym]
        for f in FEATURES:
            features[f][t, i] = values[f]
        if has_label:
            label[t, i] = values["label"]
    return PanelData(dates, symbols, features, label)
