"""Exception hierarchy.

``DataError`` subclasses describe problems with the input data and map to CLI
exit code 3; ``ConfigError`` subclasses describe bad parameters or call
contracts and map to exit code 2.
"""


class OptbtError(Exception):
    pass


class DataError(OptbtError):
    pass


class ConfigError(OptbtError):
    pass


# market data
class ParseError(DataError):
    def __init__(self, path, row, column, message):
        self.path = path
        self.row = row
        self.column = column
        super().__init__(f"{path}: row {row}, column {column!r}: {message}")


class DuplicateKey(DataError):
    pass


class MissingStockPrice(DataError):
    pass


class NoEligibleStrike(DataError):
    pass


class MissingLeg(DataError):
    pass


class DegenerateDeltas(DataError):
    pass


class GapInSeries(DataError):
    pass


class NonPositivePrice(DataError):
    pass


# indicators
class InsufficientHistory(DataError):
    pass


# strategies
class TooFewStocks(DataError):
    pass


# models / training
class ShapeMismatch(ConfigError):
    pass


class GraphNotRecorded(ConfigError):
    pass


class BatchTooSmall(ConfigError):
    pass


class MissingLinkage(DataError):
    pass


class EmptySplit(DataError):
    pass


class FingerprintMismatch(ConfigError):
    pass


# backtest
class SpanTooShort(DataError):
    pass


class AlignmentError(DataError):
    pass


class ZeroVariance(DataError):
    pass


# cli
class MissingInput(DataError):
    pass
