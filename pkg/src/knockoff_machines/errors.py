"""Exception types raised across the package."""


class KnockoffError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(KnockoffError, ValueError):
    pass


class NonFinite(KnockoffError, ValueError):
    pass


class BadParam(KnockoffError, ValueError):
    pass


class ShapeMismatch(KnockoffError, ValueError):
    pass


class StaleCache(KnockoffError, RuntimeError):
    pass


class TooFewSamples(KnockoffError, ValueError):
    pass


class DegenerateCovariance(KnockoffError, ValueError):
    pass


class ZeroVariance(KnockoffError, ValueError):
    def __init__(self, column, where="X"):
        super().__init__(f"column {column} of {where} has zero sample variance")
        self.column = column


class IndexOutOfRange(KnockoffError, IndexError):
    pass


class ConfigInvalid(KnockoffError, ValueError):
    pass


class NonFiniteLoss(KnockoffError, FloatingPointError):
    def __init__(self, iteration):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration


class FormatVersionMismatch(KnockoffError, ValueError):
    pass


class CorruptFile(KnockoffError, ValueError):
    pass


class EmptyTruth(KnockoffError, ValueError):
    pass


class DataError(KnockoffError, ValueError):
    """Malformed input data."""


class ParseError(DataError):
    def __init__(self, line, col, token):
        super().__init__(f"cannot parse {token!r} at line {line}, column {col}")
        self.line, self.col = line, col


class RaggedRows(DataError):
    def __init__(self, line, got, expected):
        super().__init__(f"line {line} has {got} fields, expected {expected}")
        self.line = line


class NonFiniteEntry(DataError):
    def __init__(self, line, col):
        super().__init__(f"non-finite value at line {line}, column {col}")
        self.line, self.col = line, col
