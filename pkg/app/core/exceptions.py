"""Error hierarchy shared by the estimation library and the command line."""
from typing import Optional


class DSEError(Exception):
    """Base class for every error raised by the toolkit."""
    category = "internal"
    exit_code = 1


# Configuration

class ConfigError(DSEError):
    category = "config"
    exit_code = 2


class MissingReference(ConfigError):
    def __init__(self, ref: str, kind: str = "config"):
        self.ref = ref
        self.kind = kind
        super().__init__(f"Unknown {kind} reference '{ref}'")


# Data files and schedules

class DataError(DSEError):
    category = "data"
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column '{column}'")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")


class SchemaError(DataError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(column)


class ScheduleOutOfRange(DataError):
    pass


class DatasetMismatch(DataError):
    pass


# Numerical / filter failures

class NumericalError(DSEError):
    category = "numerical"
    exit_code = 4


class NotPositiveDefinite(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class FilterStepError(NumericalError):
    """A filter step failed; carries the step index (and seed when known)."""

    def __init__(self, step_index: int, cause: Exception, seed: Optional[int] = None):
        self.step_index = step_index
        self.cause = cause
        self.seed = seed
        seed_part = f", seed {seed}" if seed is not None else ""
        super().__init__(f"step {step_index}{seed_part}: {type(cause).__name__}: {cause}")


# Metrics

class MetricError(DSEError):
    category = "metrics"
    exit_code = 5


class DegenerateDenominator(MetricError):
    pass


class ZeroTruthSample(MetricError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"truth sample {index} is zero; relative error undefined")
