"""Exception hierarchy shared by all alphamine modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
anything else raised by the pipeline -> 4.
"""


class AlphamineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AlphamineError):
    """Invalid run configuration. Carries the full list of problems."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(AlphamineError):
    """Malformed or insufficient input data."""


class RowParseError(DataError):
    """A CSV row could not be parsed; carries the 1-based line number."""

    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class DuplicateRowError(DataError):
    """Two CSV rows share the same (date, symbol) pair."""

    def __init__(self, date, symbol, line_no=None):
        self.date = date
        self.symbol = symbol
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"duplicate (date, symbol) pair ({date}, {symbol}){where}")


class InsufficientDataError(DataError):
    """Fewer than two dates or two symbols in the input."""


class GrammarError(AlphamineError):
    """A formula or token sequence violates the expression grammar."""


class FormulaSyntaxError(GrammarError):
    """Formula text failed to lex or parse; carries the byte offset."""

    def __init__(self, offset, message):
        self.offset = offset
        super().__init__(f"offset {offset}: {message}")


class UnknownOperatorError(GrammarError):
    """Formula text references an operator not in the grammar."""


class InvalidProgramError(GrammarError):
    """A token sequence is not a stack-valid program; carries the position."""

    def __init__(self, position, message):
        self.position = position
        super().__init__(f"position {position}: {message}")


class DanglingOperandError(InvalidProgramError):
    """More than one value left on the stack at the end marker."""


class TooLongError(GrammarError):
    """An expression does not fit within the maximum program length."""


class EvaluationError(AlphamineError):
    """An expression could not be evaluated on a panel."""


class ContractError(AlphamineError):
    """Shape or argument mismatch in the differentiable network layer."""


class NonFiniteGradientError(AlphamineError):
    """A gradient turned non-finite; the caller should skip the batch."""


class TrainingDivergedError(AlphamineError):
    """A training loss turned non-finite. Carries diagnostics."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class MissingArtifactError(AlphamineError):
    """A required upstream artifact is absent; names the producing command."""

    def __init__(self, path, producer):
        self.path = path
        self.producer = producer
        super().__init__(
            f"missing artifact {path}; produce it first with the `{producer}` command"
        )


class NotFittedError(AlphamineError):
    """Estimator used before fit(). Mirrors sklearn.exceptions.NotFittedError."""
