"""The factor zoo: qualified factors with cached values and admission metrics."""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .evaluator import evaluate
from .expr import Expr, parse_text, to_text
from .metrics import FactorMetrics, FitnessConfig, factor_metrics, psi, qualify
from .panel import DateRange, PanelData
from .errors import GrammarError
from .rpn import (
    DEFAULT_MAX_LEN,
    RpnProgram,
    Vocabulary,
    expr_token_texts,
    rpn_encode,
    token_from_text,
)


@dataclass(eq=False)
class ZooEntry:
    factor_id: int
    expr: Expr
    text: str
    program: RpnProgram
    sign: int
    metrics: FactorMetrics | None
    values: np.ndarray | None = field(repr=False, default=None)
    admitted_round: int = 0

    @property
    def signed_values(self) -> np.ndarray:
        return self.sign * self.values


class FactorZoo:
    """Ordered collection of admitted factors; pairwise psi stays below the cap."""

    def __init__(
        self,
        vocab: Vocabulary | None = None,
        max_len: int = DEFAULT_MAX_LEN,
        train_range: DateRange | None = None,
    ):
        self.vocab = vocab or Vocabulary.default()
        self.max_len = max_len
        self.train_range = train_range
        self.entries: list[ZooEntry] = []
        self.texts: set[str] = set()

    def __len__(self):
        return len(self.entries)

    def add(self, entry: ZooEntry) -> None:
        if entry.text in self.texts:
            raise DataError(f"zoo already contains {entry.text}")
        self.entries.append(entry)
        self.texts.add(entry.text)

    def next_id(self) -> int:
        return len(self.entries) + 1

    def revalue(self, panel: PanelData) -> "FactorZoo":
        """Copy with cached value matrices recomputed on the given panel."""
        out = FactorZoo(self.vocab, self.max_len, self.train_range)
        for e in self.entries:
            out.add(
                ZooEntry(
                    e.factor_id,
                    e.expr,
                    e.text,
                    e.program,
                    e.sign,
                    e.metrics,
                    evaluate(e.expr, panel),
                    e.admitted_round,
                )
            )
        return out

    # -- construction without mining ------------------------------------------

    @classmethod
    def from_expressions(
        cls,
        texts,
        panel: PanelData,
        train_range: DateRange | None = None,
        vocab: Vocabulary | None = None,
        max_len: int = DEFAULT_MAX_LEN,
        enforce_gate: bool = False,
        cfg: FitnessConfig = FitnessConfig(),
    ) -> "FactorZoo":
        """Build a zoo directly from formula texts (signs from train-range IC)."""
        if panel.label is None:
            raise DataError("panel needs a label to build a zoo")
        zoo = cls(vocab, max_len, train_range)
        days = panel.day_mask(train_range)
        for text in texts:
            expr = parse_text(text)
            values = evaluate(expr, panel)
            result = qualify(expr, zoo, panel, days, cfg, values)
            if enforce_gate and not result.accepted:
                raise DataError(f"{text} failed qualification: {result.reason}")
            try:
                program = rpn_encode(expr, zoo.vocab, max_len)
            except GrammarError:
                program = None  # formula uses off-menu constants or windows
            zoo.add(
                ZooEntry(
                    zoo.next_id(),
                    expr,
                    to_text(expr),
                    program,
                    result.sign,
                    result.metrics,
                    values,
                )
            )
        return zoo

    # -- serialization ----------------------------------------------------------

    def save_json(self, path) -> None:
        doc = {
            "created_at": dt.datetime.now(dt.timezone.utc).isoformat(),
            "max_len": self.max_len,
            "vocabulary": self.vocab.to_json(),
            "train_range": (
                None
                if self.train_range is None
                else {
                    "start": self.train_range.start.isoformat(),
                    "end": self.train_range.end.isoformat(),
                }
            ),
            "factors": [
                {
                    "id": e.factor_id,
                    "expr": e.text,
                    "rpn": e.program.token_texts if e.program else expr_token_texts(e.expr),
                    "sign": e.sign,
                    "ic": _jsonable(e.metrics.ic if e.metrics else None),
                    "icir": _jsonable(e.metrics.icir if e.metrics else None),
                    "rank_ic": _jsonable(e.metrics.rank_ic if e.metrics else None),
                    "admitted_at_round": e.admitted_round,
                }
                for e in self.entries
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "FactorZoo":
        with open(path) as fh:
            doc = json.load(fh)
        vocab = Vocabulary.from_json(doc["vocabulary"])
        rng = doc.get("train_range")
        train_range = (
            DateRange(dt.date.fromisoformat(rng["start"]), dt.date.fromisoformat(rng["end"]))
            if rng
            else None
        )
        zoo = cls(vocab, doc["max_len"], train_range)
        for item in doc["factors"]:
            expr = parse_text(item["expr"])
            tokens = tuple(token_from_text(t) for t in item["rpn"])
            zoo.add(
                ZooEntry(
                    item["id"],
                    expr,
                    item["expr"],
                    RpnProgram(tokens, max(doc["max_len"], len(tokens))),
                    item["sign"],
                    None,
                    None,
                    item.get("admitted_at_round", 0),
                )
            )
        return zoo


def _jsonable(x):
    if x is None:
        return None
    x = float(x)
    return None if not np.isfinite(x) else x


def write_metrics_report(zoo: FactorZoo, panel: PanelData, path, days=None) -> None:
    """CSV report: factor_id,expr,ic,rank_ic,icir,rank_icir,psi.

    psi is each factor's max absolute mean correlation against the rest of
    the zoo over the report days.
    """
    if days is None:
        days = panel.day_mask(zoo.train_range)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["factor_id", "expr", "ic", "rank_ic", "icir", "rank_icir", "psi"])
        for e in zoo.entries:
            values = e.values if e.values is not None else evaluate(e.expr, panel)
            m = e.metrics or factor_metrics(values, panel.label, days)
            others = [o.values for o in zoo.entries if o.factor_id != e.factor_id]
            p = psi(values, others, days)
            writer.writerow(
                [
                    e.factor_id,
                    e.text,
                    _fmt_metric(m.ic),
                    _fmt_metric(m.rank_ic),
                    _fmt_metric(m.icir),
                    _fmt_metric(m.rank_icir),
                    _fmt_metric(p),
                ]
            )


def _fmt_metric(x) -> str:
    x = float(x)
    return "" if not np.isfinite(x) else repr(x)
