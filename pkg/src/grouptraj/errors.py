"""Shared exception types."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class DimensionError(ContractError):
    """Tensor shapes are inconsistent with the operation."""


class ParseError(ValueError):
    """A data file could not be parsed; message carries the line number."""


class ValidationError(ValueError):
    """Parsed data violates a structural requirement."""


class TrainingDivergedError(RuntimeError):
    """A loss term became non-finite during optimization."""
