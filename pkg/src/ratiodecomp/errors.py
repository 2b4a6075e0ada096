"""Exception hierarchy.

Each class carries the CLI exit code used when it escapes a command.
"""

from __future__ import annotations


class DecompError(Exception):
    exit_code = 1


class ConfigError(DecompError):
    """Invalid configuration (bad JSON, inconsistent parameters)."""

    exit_code = 2


class DataError(DecompError):
    """Input data violates the panel contract."""

    exit_code = 3


class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class IntegrityError(DataError):
    pass


class DegenerateMetricError(DataError):
    def __init__(self, message: str, t: int | None = None):
        super().__init__(message)
        self.t = t


class DegenerateSegmentationError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class AggregationError(DataError):
    def __init__(self, message: str, t: int | None = None):
        super().__init__(message)
        self.t = t


class NumericalError(DecompError):
    exit_code = 4


class UnfittableFeatureError(NumericalError):
    pass


class UndefinedStatisticError(NumericalError):
    pass


class PipelineError(DecompError):
    """A pipeline stage cannot proceed (e.g. nothing survived screening)."""

    exit_code = 4


class ContractError(DecompError):
    """A caller broke an operation's precondition."""

    exit_code = 2


class ReportError(DecompError):
    exit_code = 3
