"""Exception types shared across the package."""

from __future__ import annotations


class DataFormatError(ValueError):
    """A file or record failed to parse or violated its schema."""


class InsufficientDataError(ValueError):
    """An operation was given fewer episodes than it needs."""


class NumericError(ArithmeticError):
    """A non-finite intermediate appeared during training.

    ``location`` identifies the episode / agent / step where the value
    first went bad, when that is known.
    """

    def __init__(self, message: str, location: tuple = ()):
        super().__init__(message)
        self.location = location


class MacroNotInitiable(RuntimeError):
    """A policy selected a macro whose initiation predicate is false.

    The caller is expected to re-decide over the initiable set; policies
    shipped with this package renormalize over that set and never trigger it.
    """


class TrainingError(RuntimeError):
    """A restart thread failed; carries the stream key for reproduction."""
