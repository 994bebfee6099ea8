"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid configuration, geometry, or incompatible sample rates."""


class ShapeMismatchError(ValueError):
    """Array arguments disagree on length or bin count."""


class EmptyInputError(ValueError):
    """An operation received an input too short (or too empty) to process."""


class TrainingImpossibleError(RuntimeError):
    """Every training scene halted before producing a single frame."""
