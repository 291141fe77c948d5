"""Bounded token sequences for formulas: RPN codec, legality mask, one-hot.

A program is the post-order traversal of a formula tree followed by an end
marker, at most ``max_len`` tokens long. Rolling operators consume exactly
one window token as their last argument, so sequence legality reduces to a
small stack automaton over (values on stack, window pending, slots left).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DanglingOperandError,
    GrammarError,
    InvalidProgramError,
    TooLongError,
)
from .expr import (
    BINARY_OPS,
    ROLLING_BINARY_OPS,
    ROLLING_UNARY_OPS,
    UNARY_OPS,
    BinaryOp,
    Constant,
    Expr,
    Feature,
    RollingOp,
    UnaryOp,
)
from .panel import FEATURES

DEFAULT_WINDOWS = (1, 5, 10, 20, 30, 40, 50)
DEFAULT_CONSTANTS = (
    -30.0, -10.0, -5.0, -2.0, -1.0, -0.5, -0.01,
    0.01, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0,
)
DEFAULT_MAX_LEN = 20

KIND_FEATURE = "feature"
KIND_CONSTANT = "constant"
KIND_WINDOW = "window"
KIND_UNARY = "unary"
KIND_BINARY = "binary"
KIND_ROLL_UNARY = "roll_unary"
KIND_ROLL_BINARY = "roll_binary"
KIND_END = "end"

END_TEXT = "<END>"


@dataclass(frozen=True)
class Token:
    kind: str
    payload: object = None

    @property
    def text(self) -> str:
        if self.kind == KIND_FEATURE:
            return self.payload
        if self.kind == KIND_CONSTANT:
            return repr(float(self.payload))
        if self.kind == KIND_WINDOW:
            return f"{self.payload}d"
        if self.kind == KIND_END:
            return END_TEXT
        return self.payload

    def __repr__(self):
        return f"Token({self.text})"


def token_from_text(text: str) -> Token:
    if text == END_TEXT:
        return Token(KIND_END)
    if text in FEATURES:
        return Token(KIND_FEATURE, text)
    if text in UNARY_OPS:
        return Token(KIND_UNARY, text)
    if text in BINARY_OPS:
        return Token(KIND_BINARY, text)
    if text in ROLLING_UNARY_OPS:
        return Token(KIND_ROLL_UNARY, text)
    if text in ROLLING_BINARY_OPS:
        return Token(KIND_ROLL_BINARY, text)
    if text.endswith("d") and text[:-1].isdigit():
        return Token(KIND_WINDOW, int(text[:-1]))
    try:
        return Token(KIND_CONSTANT, float(text))
    except ValueError:
        raise GrammarError(f"unrecognized token text {text!r}") from None


class Vocabulary:
    """Ordered token menu of size D; owns the token <-> row index maps."""

    def __init__(self, tokens: Sequence[Token]):
        self.tokens = tuple(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise GrammarError("vocabulary contains duplicate tokens")
        for feat in FEATURES:
            if Token(KIND_FEATURE, feat) not in self.index:
                raise GrammarError(f"vocabulary must contain feature {feat!r}")
        for group, kind in (
            (UNARY_OPS, KIND_UNARY),
            (BINARY_OPS, KIND_BINARY),
            (ROLLING_UNARY_OPS, KIND_ROLL_UNARY),
            (ROLLING_BINARY_OPS, KIND_ROLL_BINARY),
        ):
            for op in group:
                if Token(kind, op) not in self.index:
                    raise GrammarError(f"vocabulary must contain operator {op!r}")
        ends = [t for t in self.tokens if t.kind == KIND_END]
        if len(ends) != 1:
            raise GrammarError("vocabulary must contain the end marker exactly once")
        self.end_id = self.index[Token(KIND_END)]
        self.kinds = np.array([t.kind for t in self.tokens])
        self.windows = tuple(
            sorted(t.payload for t in self.tokens if t.kind == KIND_WINDOW)
        )
        self.constants = tuple(t.payload for t in self.tokens if t.kind == KIND_CONSTANT)

    @classmethod
    def default(
        cls,
        windows: Sequence[int] = DEFAULT_WINDOWS,
        constants: Sequence[float] = DEFAULT_CONSTANTS,
    ) -> "Vocabulary":
        tokens = [Token(KIND_FEATURE, f) for f in FEATURES]
        tokens += [Token(KIND_CONSTANT, float(c)) for c in constants]
        tokens += [Token(KIND_WINDOW, int(w)) for w in windows]
        tokens += [Token(KIND_UNARY, op) for op in UNARY_OPS]
        tokens += [Token(KIND_BINARY, op) for op in BINARY_OPS]
        tokens += [Token(KIND_ROLL_UNARY, op) for op in ROLLING_UNARY_OPS]
        tokens += [Token(KIND_ROLL_BINARY, op) for op in ROLLING_BINARY_OPS]
        tokens.append(Token(KIND_END))
        return cls(tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def to_json(self) -> list:
        return [t.text for t in self.tokens]

    @classmethod
    def from_json(cls, texts: Sequence[str]) -> "Vocabulary":
        return cls([token_from_text(t) for t in texts])


@dataclass(frozen=True)
class RpnProgram:
    """Post-order token sequence ending with the end marker."""

    tokens: tuple
    max_len: int

    def __post_init__(self):
        if len(self.tokens) > self.max_len:
            raise TooLongError(
                f"program has {len(self.tokens)} tokens, max is {self.max_len}"
            )
        if not self.tokens or self.tokens[-1].kind != KIND_END:
            raise InvalidProgramError(len(self.tokens), "program must end with the end marker")

    def __len__(self):
        return len(self.tokens)

    @property
    def token_texts(self) -> list:
        return [t.text for t in self.tokens]


def rpn_decode(tokens) -> Expr:
    """Rebuild the unique AST whose post-order matches the token sequence.

    Accepts an RpnProgram or a raw token sequence; tokens after the first
    end marker are ignored.
    """
    if isinstance(tokens, RpnProgram):
        tokens = tokens.tokens
    stack = []  # entries: ("value", Expr) or ("window", int)

    def pop_values(k, pos, op):
        if len(stack) < k:
            raise InvalidProgramError(pos, f"stack underflow at {op}")
        taken = stack[-k:]
        del stack[-k:]
        for tag, item in taken:
            if tag != "value":
                raise GrammarError(f"window token in value position at {op} (position {pos})")
        return [item for _, item in taken]

    for pos, tok in enumerate(tokens):
        kind = tok.kind
        if kind == KIND_END:
            if not stack:
                raise InvalidProgramError(pos, "end marker with empty stack")
            if len(stack) > 1:
                raise DanglingOperandError(pos, f"{len(stack)} values left at end marker")
            tag, item = stack[0]
            if tag != "value":
                raise GrammarError(f"window token in value position at end marker (position {pos})")
            return item
        if kind == KIND_FEATURE:
            stack.append(("value", Feature(tok.payload)))
        elif kind == KIND_CONSTANT:
            stack.append(("value", Constant(float(tok.payload))))
        elif kind == KIND_WINDOW:
            stack.append(("window", int(tok.payload)))
        elif kind == KIND_UNARY:
            (child,) = pop_values(1, pos, tok.payload)
            stack.append(("value", UnaryOp(tok.payload, child)))
        elif kind == KIND_BINARY:
            left, right = pop_values(2, pos, tok.payload)
            stack.append(("value", BinaryOp(tok.payload, left, right)))
        elif kind in (KIND_ROLL_UNARY, KIND_ROLL_BINARY):
            if not stack:
                raise InvalidProgramError(pos, f"stack underflow at {tok.payload}")
            tag, window = stack.pop()
            if tag != "window":
                raise GrammarError(
                    f"{tok.payload} expects a window token on top of the stack (position {pos})"
                )
            arity = 1 if kind == KIND_ROLL_UNARY else 2
            args = pop_values(arity, pos, tok.payload)
            stack.append(("value", RollingOp(tok.payload, tuple(args), window)))
        else:
            raise GrammarError(f"unknown token kind {kind!r} at position {pos}")
    raise InvalidProgramError(len(tokens), "missing end marker")


def _expr_tokens(expr: Expr) -> list:
    if isinstance(expr, Feature):
        return [Token(KIND_FEATURE, expr.name)]
    if isinstance(expr, Constant):
        return [Token(KIND_CONSTANT, float(expr.value))]
    if isinstance(expr, UnaryOp):
        return _expr_tokens(expr.child) + [Token(KIND_UNARY, expr.op)]
    if isinstance(expr, BinaryOp):
        return (
            _expr_tokens(expr.left)
            + _expr_tokens(expr.right)
            + [Token(KIND_BINARY, expr.op)]
        )
    if isinstance(expr, RollingOp):
        out = []
        for a in expr.args:
            out += _expr_tokens(a)
        kind = KIND_ROLL_UNARY if expr.op in ROLLING_UNARY_OPS else KIND_ROLL_BINARY
        out += [Token(KIND_WINDOW, expr.window), Token(kind, expr.op)]
        return out
    raise GrammarError(f"not an expression node: {expr!r}")


def expr_token_texts(expr: Expr) -> list:
    """Post-order token texts (end marker included), no vocabulary check."""
    return [t.text for t in _expr_tokens(expr)] + [END_TEXT]


def rpn_encode(expr: Expr, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> RpnProgram:
    """Post-order encode; every token must be on the vocabulary's menu."""
    tokens = _expr_tokens(expr) + [Token(KIND_END)]
    if len(tokens) > max_len:
        raise TooLongError(f"program needs {len(tokens)} tokens, max is {max_len}")
    for tok in tokens:
        if tok not in vocab.index:
            raise GrammarError(f"token {tok.text!r} is not in the vocabulary menu")
    return RpnProgram(tuple(tokens), max_len)


# -- legality mask --------------------------------------------------------------


class MaskAutomaton:
    """Vectorized legality automaton over batches of partial programs.

    State per sequence: v = number of values on the stack, w = a window
    token sits on top, done = end marker emitted. A token is legal iff the
    resulting state can still finish a stack-valid program (one value plus
    the end marker) within the remaining slots.
    """

    def __init__(self, vocab: Vocabulary, max_len: int):
        if max_len < 2:
            raise GrammarError(f"max_len must be >= 2, got {max_len}")
        self.vocab = vocab
        self.max_len = max_len
        kinds = vocab.kinds
        self.is_value = (kinds == KIND_FEATURE) | (kinds == KIND_CONSTANT)
        self.is_window = kinds == KIND_WINDOW
        self.is_unary = kinds == KIND_UNARY
        self.is_binary = kinds == KIND_BINARY
        self.is_roll_unary = kinds == KIND_ROLL_UNARY
        self.is_roll_binary = kinds == KIND_ROLL_BINARY
        self.is_end = kinds == KIND_END
        self.dv = (
            self.is_value.astype(np.int64)
            - self.is_binary.astype(np.int64)
            - self.is_roll_binary.astype(np.int64)
        )

    def initial_state(self, batch: int):
        return (
            np.zeros(batch, dtype=np.int64),
            np.zeros(batch, dtype=bool),
            np.zeros(batch, dtype=bool),
        )

    def column_mask(self, state, position: int) -> np.ndarray:
        """(batch, D) legality of every token at this position."""
        v, w, done = state
        r_after = self.max_len - position - 1  # slots left after this token
        if r_after < 0:
            raise InvalidProgramError(position, f"position beyond max_len {self.max_len}")
        live = ~done
        col = lambda cond: cond[:, None]
        mask = np.zeros((v.shape[0], self.vocab.size), dtype=bool)
        mask |= col(live & ~w & (v + 1 <= r_after)) & self.is_value
        window_min = np.where(v >= 2, v, 2)
        mask |= col(live & ~w & (v >= 1) & (window_min <= r_after)) & self.is_window
        mask |= col(live & ~w & (v >= 1) & (v <= r_after)) & self.is_unary
        mask |= col(live & ~w & (v >= 2) & (v - 1 <= r_after)) & self.is_binary
        mask |= col(live & w & (v >= 1) & (v <= r_after)) & self.is_roll_unary
        mask |= col(live & w & (v >= 2) & (v - 1 <= r_after)) & self.is_roll_binary
        mask |= col(done | (~w & (v == 1))) & self.is_end
        return mask

    def step(self, state, token_ids: np.ndarray):
        v, w, done = state
        ids = np.asarray(token_ids)
        new_done = done | self.is_end[ids]
        new_v = v + np.where(done, 0, self.dv[ids])
        new_w = np.where(done, w, self.is_window[ids])
        return new_v, new_w, new_done


def legality_mask(prefix, max_len: int, vocab: Vocabulary) -> np.ndarray:
    """Which tokens may extend the prefix into a completable program.

    Returns a boolean vector of length D. A structurally broken or
    unextendable prefix yields the all-false vector; once the end marker
    has been emitted only further end markers (padding) are legal.
    """
    if isinstance(prefix, RpnProgram):
        prefix = prefix.tokens
    auto = MaskAutomaton(vocab, max_len)
    state = auto.initial_state(1)
    for pos, tok in enumerate(prefix):
        if pos >= max_len:
            return np.zeros(vocab.size, dtype=bool)
        tok_id = vocab.index.get(tok)
        if tok_id is None:
            return np.zeros(vocab.size, dtype=bool)
        if not auto.column_mask(state, pos)[0, tok_id]:
            return np.zeros(vocab.size, dtype=bool)
        state = auto.step(state, np.array([tok_id]))
    if len(prefix) >= max_len:
        return np.zeros(vocab.size, dtype=bool)
    return auto.column_mask(state, len(prefix))[0]


def sample_random(vocab: Vocabulary, max_len: int, rng: np.random.Generator) -> RpnProgram:
    """Draw a program uniformly-among-legal token by token; always valid."""
    auto = MaskAutomaton(vocab, max_len)
    state = auto.initial_state(1)
    out = []
    for pos in range(max_len):
        legal = np.flatnonzero(auto.column_mask(state, pos)[0])
        tok_id = int(legal[rng.integers(len(legal))])
        out.append(vocab.tokens[tok_id])
        if tok_id == vocab.end_id:
            break
        state = auto.step(state, np.array([tok_id]))
    return RpnProgram(tuple(out), max_len)


# -- one-hot codec ---------------------------------------------------------------


def to_onehot(prog: RpnProgram, vocab: Vocabulary) -> np.ndarray:
    """D x S binary matrix; columns after the end marker stay on the end row."""
    x = np.zeros((vocab.size, prog.max_len))
    ids = [vocab.index[t] for t in prog.tokens]
    ids += [vocab.end_id] * (prog.max_len - len(ids))
    x[ids, np.arange(prog.max_len)] = 1.0
    return x


def from_onehot(x: np.ndarray, vocab: Vocabulary) -> RpnProgram:
    """Column-wise argmax (lowest index on ties), truncated at the first end marker."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != vocab.size:
        raise GrammarError(f"one-hot matrix must be {vocab.size} x S, got {x.shape}")
    ids = np.argmax(x, axis=0)
    return program_from_token_ids(ids, vocab, x.shape[1])


def program_from_token_ids(ids, vocab: Vocabulary, max_len: int) -> RpnProgram:
    """Truncate an id sequence at its first end marker and validate by decoding."""
    ids = list(np.asarray(ids).tolist())
    if vocab.end_id in ids:
        ids = ids[: ids.index(vocab.end_id) + 1]
    tokens = tuple(vocab.tokens[i] for i in ids)
    rpn_decode(tokens)  # raises unless stack-valid
    return RpnProgram(tokens, max_len)
