"""Exception hierarchy for the basis distiller."""

from typing import Optional


class DistillerError(Exception):
    """Base class for every error raised by this package."""


class InputError(DistillerError):
    """Invalid user input or configuration (CLI exit code 2)."""


# Engine


class DimensionError(DistillerError, ValueError):
    """Operand shapes do not agree."""


class DomainError(DistillerError, ValueError):
    """A value lies outside the domain of an operation (e.g. log of 0)."""


class ContractError(DistillerError):
    """An API precondition was violated by the caller."""


# Data


class GraphParseError(InputError):
    """A graph record could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(InputError):
    """Graphs in one dataset disagree on their schema."""


class DegenerateSplitError(InputError):
    """Too few distinct density values to form the requested bins."""


class DegenerateGraphError(DistillerError, ValueError):
    """A graph is too small for the requested statistic."""


class EmptyDatasetError(InputError):
    """A dataset has no graphs where at least one is required."""


class BasisLoadError(InputError):
    """A basis checkpoint is corrupt or has an unsupported version."""


class ConfigError(InputError):
    """Invalid configuration value or file."""


# Optimisation


class NonFiniteLossError(DistillerError):
    """A loss became NaN or infinite during training."""

    def __init__(self, stage: str, step: int, value: float):
        self.stage = stage
        self.step = step
        self.value = value
        super().__init__(f"non-finite {stage} loss ({value}) at step {step}")
