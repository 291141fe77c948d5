"""Formula AST, surface-syntax parser and canonical printer.

The surface syntax is the one used throughout factor listings:
``op(arg, ..., window)`` calls for named operators, infix ``+ - * / **``,
unary minus, and numeric literals. ``ts_`` operators and ``Ref`` take their
window as a trailing integer argument, e.g. ``ts_cov(high,volume,20)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

from .errors import FormulaSyntaxError, GrammarError, UnknownOperatorError
from .panel import FEATURES

UNARY_OPS = ("Abs", "S_log1p", "Inv", "Neg")
BINARY_OPS = ("Add", "Sub", "Mul", "Div", "Pow")
ROLLING_UNARY_OPS = (
    "Ref",
    "ts_mean",
    "ts_sum",
    "ts_std",
    "ts_var",
    "ts_min",
    "ts_max",
    "ts_mad",
    "ts_delta",
)
ROLLING_BINARY_OPS = ("ts_corr", "ts_cov")

_BINARY_SYMBOL = {"Add": "+", "Sub": "-", "Mul": "*", "Div": "/", "Pow": "**"}
_SYMBOL_BINARY = {v: k for k, v in _BINARY_SYMBOL.items()}


@dataclass(frozen=True)
class Feature:
    name: str


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class UnaryOp:
    op: str
    child: "Expr"


@dataclass(frozen=True)
class BinaryOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class RollingOp:
    op: str
    args: tuple
    window: int


Expr = Union[Feature, Constant, UnaryOp, BinaryOp, RollingOp]


def to_text(expr: Expr) -> str:
    """Canonical text form; ``parse_text(to_text(e)) == e`` for any valid e."""
    if isinstance(expr, Feature):
        return expr.name
    if isinstance(expr, Constant):
        return repr(float(expr.value))
    if isinstance(expr, UnaryOp):
        return f"{expr.op}({to_text(expr.child)})"
    if isinstance(expr, BinaryOp):
        return f"({to_text(expr.left)}{_BINARY_SYMBOL[expr.op]}{to_text(expr.right)})"
    if isinstance(expr, RollingOp):
        args = ",".join(to_text(a) for a in expr.args)
        return f"{expr.op}({args},{expr.window})"
    raise TypeError(f"not an expression node: {expr!r}")


def iter_postorder(expr: Expr) -> Iterator[Expr]:
    """Yield nodes child-first; rolling windows are not separate nodes."""
    if isinstance(expr, UnaryOp):
        yield from iter_postorder(expr.child)
    elif isinstance(expr, BinaryOp):
        yield from iter_postorder(expr.left)
        yield from iter_postorder(expr.right)
    elif isinstance(expr, RollingOp):
        for a in expr.args:
            yield from iter_postorder(a)
    yield expr


def warmup_days(expr: Expr) -> int:
    """Trailing days consumed before the expression produces its first value."""
    if isinstance(expr, (Feature, Constant)):
        return 0
    if isinstance(expr, UnaryOp):
        return warmup_days(expr.child)
    if isinstance(expr, BinaryOp):
        return max(warmup_days(expr.left), warmup_days(expr.right))
    lead = expr.window if expr.op in ("Ref", "ts_delta") else expr.window - 1
    return lead + max(warmup_days(a) for a in expr.args)


def validate_expr(expr: Expr) -> None:
    """Raise GrammarError on unknown operators, bad arity or windows."""
    if isinstance(expr, Feature):
        if expr.name not in FEATURES:
            raise UnknownOperatorError(f"unknown feature {expr.name!r}")
    elif isinstance(expr, Constant):
        pass
    elif isinstance(expr, UnaryOp):
        if expr.op not in UNARY_OPS:
            raise UnknownOperatorError(f"unknown unary operator {expr.op!r}")
        validate_expr(expr.child)
    elif isinstance(expr, BinaryOp):
        if expr.op not in BINARY_OPS:
            raise UnknownOperatorError(f"unknown binary operator {expr.op!r}")
        validate_expr(expr.left)
        validate_expr(expr.right)
    elif isinstance(expr, RollingOp):
        if expr.op in ROLLING_UNARY_OPS:
            arity = 1
        elif expr.op in ROLLING_BINARY_OPS:
            arity = 2
        else:
            raise UnknownOperatorError(f"unknown rolling operator {expr.op!r}")
        if len(expr.args) != arity:
            raise GrammarError(
                f"{expr.op} takes {arity} series argument(s) plus a window, got {len(expr.args)}"
            )
        if not isinstance(expr.window, int) or expr.window < 1:
            raise GrammarError(f"{expr.op} window must be a positive integer, got {expr.window!r}")
        for a in expr.args:
            validate_expr(a)
    else:
        raise GrammarError(f"not an expression node: {expr!r}")


# -- tokenizer ------------------------------------------------------------------


_PUNCT = {"(": "lparen", ")": "rparen", ",": "comma"}


def _tokenize(source: str):
    tokens = []
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _PUNCT:
            tokens.append((_PUNCT[ch], ch, i))
            i += 1
            continue
        if ch == "*":
            if source.startswith("**", i):
                tokens.append(("op", "**", i))
                i += 2
            else:
                tokens.append(("op", "*", i))
                i += 1
            continue
        if ch in "+-/":
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (source[j].isdigit() or (source[j] == "." and not seen_dot)):
                seen_dot = seen_dot or source[j] == "."
                j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k >= n or not source[k].isdigit():
                    raise FormulaSyntaxError(j, "malformed exponent")
                while k < n and source[k].isdigit():
                    k += 1
                j = k
            tokens.append(("number", source[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            tokens.append(("name", source[i:j], i))
            i = j
            continue
        raise FormulaSyntaxError(i, f"unexpected character {ch!r}")
    tokens.append(("end", "", n))
    return tokens


# -- recursive-descent parser ----------------------------------------------------

_ADD_PREC = 1
_MUL_PREC = 2
_UNARY_PREC = 3
_POW_PREC = 4


class _Parser:
    def __init__(self, source: str):
        self.source = source
        self.tokens = _tokenize(source)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind, what):
        tok = self.advance()
        if tok[0] != kind:
            raise FormulaSyntaxError(tok[2], f"expected {what}, found {tok[1]!r}")
        return tok

    def parse(self) -> Expr:
        expr = self.expression(0)
        tok = self.peek()
        if tok[0] != "end":
            raise FormulaSyntaxError(tok[2], f"unexpected trailing {tok[1]!r}")
        return expr

    def expression(self, min_prec: int) -> Expr:
        left = self.unary()
        while True:
            kind, value, _ = self.peek()
            if kind != "op":
                return left
            prec = _POW_PREC if value == "**" else _MUL_PREC if value in "*/" else _ADD_PREC
            if prec < min_prec:
                return left
            self.advance()
            # ** is right-associative, the rest left-associative
            right = self.expression(prec if value == "**" else prec + 1)
            left = BinaryOp(_SYMBOL_BINARY[value], left, right)

    def unary(self) -> Expr:
        kind, value, offset = self.peek()
        if kind == "op" and value == "-":
            self.advance()
            nkind, nvalue, _ = self.peek()
            if nkind == "number":
                self.advance()
                return Constant(-float(nvalue))
            return UnaryOp("Neg", self.unary())
        if kind == "op" and value == "+":
            self.advance()
            return self.unary()
        return self.primary()

    def primary(self) -> Expr:
        kind, value, offset = self.advance()
        if kind == "number":
            return Constant(float(value))
        if kind == "lparen":
            inner = self.expression(0)
            self.expect("rparen", "')'")
            return inner
        if kind == "name":
            if self.peek()[0] == "lparen":
                return self.call(value, offset)
            if value in FEATURES:
                return Feature(value)
            raise UnknownOperatorError(f"unknown name {value!r} at offset {offset}")
        raise FormulaSyntaxError(offset, f"expected an operand, found {value!r}")

    def call(self, name: str, offset: int) -> Expr:
        self.expect("lparen", "'('")
        args = [self.expression(0)]
        while self.peek()[0] == "comma":
            self.advance()
            args.append(self.expression(0))
        self.expect("rparen", "')'")

        if name in UNARY_OPS:
            if len(args) != 1:
                raise GrammarError(f"{name} takes exactly 1 argument, got {len(args)}")
            return UnaryOp(name, args[0])
        if name in _SYMBOL_BINARY.values() or name in BINARY_OPS:
            if len(args) != 2:
                raise GrammarError(f"{name} takes exactly 2 arguments, got {len(args)}")
            return BinaryOp(name, args[0], args[1])
        if name in ROLLING_UNARY_OPS or name in ROLLING_BINARY_OPS:
            arity = 1 if name in ROLLING_UNARY_OPS else 2
            if len(args) != arity + 1:
                raise GrammarError(
                    f"{name} takes {arity} series argument(s) plus a window, got {len(args)}"
                )
            window = self._window_arg(args[-1], name, offset)
            return RollingOp(name, tuple(args[:-1]), window)
        raise UnknownOperatorError(f"unknown operator {name!r} at offset {offset}")

    @staticmethod
    def _window_arg(arg: Expr, name: str, offset: int) -> int:
        if isinstance(arg, Constant) and float(arg.value).is_integer() and arg.value >= 1:
            return int(arg.value)
        raise GrammarError(f"{name} window must be a positive integer literal (offset {offset})")


def parse_text(source: str) -> Expr:
    """Parse formula text into an AST.

    Raises FormulaSyntaxError (with byte offset), UnknownOperatorError, or
    GrammarError on arity/window violations.
    """
    expr = _Parser(source).parse()
    validate_expr(expr)
    return expr
