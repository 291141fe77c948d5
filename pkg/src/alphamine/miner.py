"""Mining loop: train a fitness surrogate, steer a generator against it,
harvest candidate formulas and grow the factor zoo.

Each outer round refreshes every library sample's fitness against the
current zoo (the landscape changes as the zoo grows), reinitializes both
networks, fits the predictor to the library, then alternates generator
steps with harvesting. Candidates that clear the qualification gate are
admitted; every generated sample is appended to the library with its
fitness at harvest time.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, NonFiniteGradientError, TrainingDivergedError
from .evaluator import evaluate
from .expr import Expr, to_text
from .metrics import FactorMetrics, FitnessConfig, daily_corr_series, factor_metrics
from .panel import DateRange, PanelData
from .rpn import (
    DEFAULT_MAX_LEN,
    MaskAutomaton,
    Vocabulary,
    program_from_token_ids,
    rpn_decode,
    rpn_encode,
    sample_random,
)
from .zoo import FactorZoo, ZooEntry
from . import nn

logger = logging.getLogger(__name__)

_TINY = 1e-9


@dataclass(frozen=True)
class MinerConfig:
    target_factors: int = 10
    library_size: int = 2000
    epochs_per_round: int = 200
    predictor_epochs: int = 40
    batch_size: int = 128
    latent_dim: int = 64
    max_len: int = DEFAULT_MAX_LEN
    lambda_onehot: float = 0.1
    lambda_hidden: float = 0.1
    temperature: float = 1.0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    max_rounds: int = 50
    library_cap: int = 50000
    predictor_hidden: tuple = (256, 64)
    generator_hidden: tuple = (256,)
    fitness: FitnessConfig = field(default_factory=FitnessConfig)
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        positive = {
            "library_size": self.library_size,
            "epochs_per_round": self.epochs_per_round,
            "predictor_epochs": self.predictor_epochs,
            "batch_size": self.batch_size,
            "latent_dim": self.latent_dim,
            "max_len": self.max_len,
            "temperature": self.temperature,
            "learning_rate": self.learning_rate,
            "max_rounds": self.max_rounds,
            "library_cap": self.library_cap,
        }
        bad = [k for k, v in positive.items() if v <= 0]
        if self.target_factors < 0:
            bad.append("target_factors")
        if self.lambda_onehot < 0 or self.lambda_hidden < 0:
            bad.append("lambda penalties")
        if bad:
            raise ValueError(f"MinerConfig fields must be positive: {bad}")

    def adam(self) -> nn.AdamConfig:
        return nn.AdamConfig(self.learning_rate, self.beta1, self.beta2)


@dataclass
class _LibraryEntry:
    ids: tuple
    fitness: float


class SampleLibrary:
    """FIFO-capped set of generated programs with their fitness labels."""

    def __init__(self, max_len: int, end_id: int, cap: int = 50000):
        self.max_len = max_len
        self.end_id = end_id
        self.cap = cap
        self.entries: list[_LibraryEntry] = []
        self._seen: set = set()

    def __len__(self):
        return len(self.entries)

    def add(self, ids: Sequence[int], fitness: float) -> bool:
        key = tuple(int(i) for i in ids)
        if key in self._seen:
            return False
        self._seen.add(key)
        self.entries.append(_LibraryEntry(key, float(fitness)))
        while len(self.entries) > self.cap:
            dropped = self.entries.pop(0)
            self._seen.discard(dropped.ids)
        return True

    def padded_ids(self) -> np.ndarray:
        out = np.full((len(self.entries), self.max_len), self.end_id, dtype=np.int64)
        for row, e in enumerate(self.entries):
            out[row, : len(e.ids)] = e.ids
        return out

    def fitness_array(self) -> np.ndarray:
        return np.array([e.fitness for e in self.entries])


def expand_onehot(ids: np.ndarray, vocab_size: int) -> np.ndarray:
    """(B, S) token ids -> flat (B, S*D) one-hot rows."""
    ids = np.asarray(ids)
    batch, S = ids.shape
    x = np.zeros((batch, S * vocab_size))
    cols = np.arange(S)[None, :] * vocab_size + ids
    x[np.repeat(np.arange(batch), S), cols.ravel()] = 1.0
    return x


class _Record:
    __slots__ = ("expr", "text", "metrics", "corr")

    def __init__(self, expr: Expr, text: str, metrics: FactorMetrics):
        self.expr = expr
        self.text = text
        self.metrics = metrics
        self.corr: list[float] = []


class _FitnessOracle:
    """Caches per-expression metrics and zoo correlation profiles."""

    def __init__(self, panel: PanelData, days: np.ndarray, vocab: Vocabulary,
                 cfg: FitnessConfig, jobs: int = 1):
        self.panel = panel
        self.days = days
        self.vocab = vocab
        self.cfg = cfg
        self.jobs = max(1, jobs)
        self._by_text: dict[str, _Record] = {}
        self._text_by_ids: dict[tuple, str] = {}

    def _decode_ids(self, ids: Sequence[int]) -> Expr:
        key = tuple(int(i) for i in ids)
        prog = program_from_token_ids(np.asarray(key), self.vocab, len(key))
        return rpn_decode(prog)

    def _compute(self, expr: Expr, text: str) -> _Record:
        values = evaluate(expr, self.panel)
        return _Record(
            expr, text,
            factor_metrics(values, self.panel.label, self.days, with_rank=False),
        )

    def record_for_ids(self, ids: Sequence[int]) -> _Record:
        key = tuple(int(i) for i in ids)
        text = self._text_by_ids.get(key)
        if text is None:
            expr = self._decode_ids(key)
            text = to_text(expr)
            self._text_by_ids[key] = text
            if text not in self._by_text:
                self._by_text[text] = self._compute(expr, text)
        return self._by_text[text]

    def prime(self, ids_rows: Sequence[Sequence[int]]) -> None:
        """Warm the cache for a batch of programs, optionally in parallel."""
        fresh = []
        for ids in ids_rows:
            key = tuple(int(i) for i in ids)
            if key in self._text_by_ids:
                continue
            expr = self._decode_ids(key)
            text = to_text(expr)
            self._text_by_ids[key] = text
            if text not in self._by_text and all(text != t for _, t in fresh):
                fresh.append((expr, text))
        if not fresh:
            return
        if self.jobs > 1:
            with ThreadPoolExecutor(max_workers=self.jobs) as pool:
                records = list(pool.map(lambda et: self._compute(*et), fresh))
        else:
            records = [self._compute(expr, text) for expr, text in fresh]
        for (_, text), rec in zip(fresh, records):
            self._by_text[text] = rec

    def _extend_profile(self, rec: _Record, zoo: FactorZoo) -> None:
        if len(rec.corr) >= len(zoo.entries):
            return
        values = evaluate(rec.expr, self.panel)
        for member in zoo.entries[len(rec.corr) :]:
            series = np.where(self.days, daily_corr_series(values, member.values), np.nan)
            finite = series[np.isfinite(series)]
            rec.corr.append(float(finite.mean()) if finite.size else 0.0)

    def psi(self, rec: _Record, zoo: FactorZoo) -> float:
        self._extend_profile(rec, zoo)
        k = len(zoo.entries)
        return max((abs(c) for c in rec.corr[:k]), default=0.0)

    def fitness(self, rec: _Record, zoo: FactorZoo) -> float:
        ic = rec.metrics.ic
        if not np.isfinite(ic) or ic == 0.0:
            return 0.0
        if len(zoo.entries) and self.psi(rec, zoo) >= self.cfg.corr_cap:
            return 0.0
        return abs(ic)

    def passes_gate(self, rec: _Record, zoo: FactorZoo) -> bool:
        """Same admission rule as metrics.qualify, over cached pieces."""
        m = rec.metrics
        if not np.isfinite(m.ic) or abs(m.ic) < self.cfg.min_ic:
            return False
        if m.ic_std >= _TINY and not (np.isfinite(m.icir) and abs(m.icir) >= self.cfg.min_icir):
            return False
        if rec.text in zoo.texts:
            return False
        return self.psi(rec, zoo) < self.cfg.corr_cap


# -- training ----------------------------------------------------------------------


def train_predictor(
    net: nn.MLP,
    library: SampleLibrary,
    epochs: int,
    batch_size: int,
    adam: nn.Adam,
    rng: np.random.Generator,
) -> float:
    """Fit the surrogate to the library fitness labels; returns the final
    root-mean-square error over the whole library."""
    if not len(library):
        raise DataError("sample library is empty")
    ids = library.padded_ids()
    y = library.fitness_array()
    D = net.sizes[0] // library.max_len
    n = len(library)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            take = order[start : start + batch_size]
            x = expand_onehot(ids[take], D)
            target = y[take][:, None]
            pred = net(x)
            loss = nn.sqrt(nn.tmean(nn.square(nn.sub(pred, target))))
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(
                    "predictor loss is non-finite",
                    {"batch_start": int(start), "loss": float(loss.data)},
                )
            loss.backward()
            try:
                adam.step()
            except NonFiniteGradientError:
                logger.warning("skipping predictor batch with non-finite gradient")
            adam.zero_grad()
    residuals = []
    for start in range(0, n, 4096):
        x = expand_onehot(ids[start : start + 4096], D)
        residuals.append(net(x).data[:, 0] - y[start : start + 4096])
    res = np.concatenate(residuals)
    return float(np.sqrt(np.mean(res * res)))


def train_generator_epoch(
    gen: nn.MLP,
    pred: nn.MLP,
    automaton: MaskAutomaton,
    adam: nn.Adam,
    cfg: MinerConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """One generator step: two latent batches through the masked sampler,
    surrogate score plus diversity penalties, one optimizer update.

    Returns the (2*batch, S) token ids of the freshly generated programs.
    """
    z1 = rng.standard_normal((cfg.batch_size, cfg.latent_dim))
    z2 = rng.standard_normal((cfg.batch_size, cfg.latent_dim))
    logits1 = gen(z1)
    logits2 = gen(z2)
    soft1, hard1, ids1 = nn.masked_gumbel_sequence(logits1, automaton, cfg.temperature, rng)
    soft2, _, ids2 = nn.masked_gumbel_sequence(logits2, automaton, cfg.temperature, rng)
    st1 = nn.straight_through(hard1, soft1)
    loss = nn.neg(nn.tmean(pred(st1)))
    if cfg.lambda_onehot:
        loss = nn.add(loss, nn.mul(nn.cosine_rows(soft1, soft2), cfg.lambda_onehot))
    if cfg.lambda_hidden:
        loss = nn.add(loss, nn.mul(nn.cosine_rows(logits1, logits2), cfg.lambda_hidden))
    loss.backward()
    try:
        adam.step()
    except NonFiniteGradientError:
        logger.warning("skipping generator step with non-finite gradient")
    adam.zero_grad()
    return np.concatenate([ids1, ids2], axis=0)


def _trim_ids(row: np.ndarray, end_id: int) -> tuple:
    ids = row.tolist()
    return tuple(ids[: ids.index(end_id) + 1])


def _harvest(
    ids_batch: np.ndarray,
    oracle: _FitnessOracle,
    zoo: FactorZoo,
    library: SampleLibrary,
    cfg: MinerConfig,
    round_no: int,
) -> None:
    rows = [_trim_ids(row, library.end_id) for row in ids_batch]
    unique, seen = [], set()
    for row in rows:
        if row not in seen:
            seen.add(row)
            unique.append(row)
    oracle.prime(unique)
    for row in unique:
        rec = oracle.record_for_ids(row)
        library.add(row, oracle.fitness(rec, zoo))
        if len(zoo.entries) >= cfg.target_factors:
            continue
        if not oracle.passes_gate(rec, zoo):
            continue
        values = evaluate(rec.expr, oracle.panel)
        full_metrics = factor_metrics(values, oracle.panel.label, oracle.days)
        zoo.add(
            ZooEntry(
                zoo.next_id(),
                rec.expr,
                rec.text,
                rpn_encode(rec.expr, zoo.vocab, cfg.max_len),
                1 if rec.metrics.ic >= 0 else -1,
                full_metrics,
                values,
                round_no,
            )
        )
        logger.info(
            "admitted factor %d (round %d, |IC|=%.4f): %s",
            zoo.entries[-1].factor_id, round_no, abs(rec.metrics.ic), rec.text,
        )


def run_mining(
    panel: PanelData,
    train_range: DateRange | None,
    cfg: MinerConfig,
    vocab: Vocabulary | None = None,
) -> FactorZoo:
    """Grow a factor zoo on the panel's training range until the target size
    or the round budget runs out (partial zoo logged with a warning)."""
    vocab = vocab or Vocabulary.default()
    if panel.label is None:
        raise DataError("panel has no label; compute or plant one before mining")
    days = panel.day_mask(train_range)
    needed = max(vocab.windows) + 1
    if int(days.sum()) < needed:
        raise DataError(
            f"training range has {int(days.sum())} days; need at least {needed} "
            f"(max rolling window plus one)"
        )

    zoo = FactorZoo(vocab, cfg.max_len, train_range)
    if cfg.target_factors == 0:
        return zoo

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.max_rounds + 1)
    lib_rng = np.random.default_rng(seeds[0])
    oracle = _FitnessOracle(panel, days, vocab, cfg.fitness, cfg.jobs)
    library = SampleLibrary(cfg.max_len, vocab.end_id, cfg.library_cap)
    for _ in range(cfg.library_size):
        prog = sample_random(vocab, cfg.max_len, lib_rng)
        library.add([vocab.index[t] for t in prog.tokens], 0.0)

    automaton = MaskAutomaton(vocab, cfg.max_len)
    D = vocab.size
    for round_no in range(1, cfg.max_rounds + 1):
        oracle.prime([e.ids for e in library.entries])
        for entry in library.entries:
            entry.fitness = oracle.fitness(oracle.record_for_ids(entry.ids), zoo)

        round_rng = np.random.default_rng(seeds[round_no])
        pred = nn.MLP([cfg.max_len * D, *cfg.predictor_hidden, 1], "relu", round_rng)
        gen = nn.MLP([cfg.latent_dim, *cfg.generator_hidden, cfg.max_len * D], "relu", round_rng)
        adam_p = nn.Adam(pred.parameters(), cfg.adam())
        adam_g = nn.Adam(gen.parameters(), cfg.adam())

        p_loss = train_predictor(
            pred, library, cfg.predictor_epochs, cfg.batch_size, adam_p, round_rng
        )
        logger.info("round %d: predictor RMSE %.4f on %d samples", round_no, p_loss, len(library))

        for _ in range(cfg.epochs_per_round):
            ids = train_generator_epoch(gen, pred, automaton, adam_g, cfg, round_rng)
            _harvest(ids, oracle, zoo, library, cfg, round_no)
            if len(zoo.entries) >= cfg.target_factors:
                break
        if len(zoo.entries) >= cfg.target_factors:
            break
    if len(zoo.entries) < cfg.target_factors:
        logger.warning(
            "round budget exhausted: zoo has %d of %d factors",
            len(zoo.entries), cfg.target_factors,
        )
    return zoo
