"""Exception types shared across the package."""

from __future__ import annotations


class UnitypeError(Exception):
    """Base class for all package errors."""


class UnknownLabel(UnitypeError):
    """A label is absent from the oracle universe, mapping, or descriptor."""


class UnknownNode(UnitypeError):
    """A node id does not exist in the hierarchy."""


class InconsistentOracle(UnitypeError):
    """The assertion table derives contradictory relations.

    ``chain`` holds the offending assertions, in derivation order.
    """

    def __init__(self, message: str, chain: list[str] | None = None):
        self.chain = chain or []
        if self.chain:
            message = message + "\n  " + "\n  ".join(self.chain)
        super().__init__(message)


class ParseError(UnitypeError):
    """A structured-text file failed to parse.

    Carries the path and 1-based line number of the first bad line.
    """

    def __init__(self, path: str, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class InvalidSpan(UnitypeError):
    """A mention span does not satisfy 0 <= start < end <= len(tokens)."""


class EmptyPool(UnitypeError):
    """Pooling was requested over zero instances."""


class EmptyCandidateSet(UnitypeError):
    """A training instance resolved to an empty candidate set."""


class NonFiniteInput(UnitypeError):
    """A numeric input contained NaN or infinity."""


class DivergedLoss(UnitypeError):
    """Training produced a non-finite loss."""


class MissingModel(UnitypeError):
    """No model or head is available for a test instance's origin dataset."""


class UnmappableLabel(UnitypeError):
    """A predicted or gold label cannot be resolved to hierarchy nodes."""


class InvalidSpec(UnitypeError):
    """A synthetic benchmark specification violates its invariants."""


class ConfigError(UnitypeError):
    """A run configuration file is missing, malformed, or inconsistent."""
