"""Exception types shared across the package."""

from __future__ import annotations


class RulforgeError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RulforgeError):
    """An argument or configuration value violates a documented contract."""


class ParseError(RulforgeError):
    """A text input could not be parsed; carries the 1-based position."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", field {column}" if column is not None else "") + ")"
        super().__init__(message + loc)


class MalformedRowError(ParseError):
    """A data row had the wrong number of fields."""


class IntegrityError(RulforgeError):
    """Parsed or stored data is structurally inconsistent."""


class NotFoundError(RulforgeError):
    """A required input file is missing."""


class ShapeError(RulforgeError):
    """Tensor arguments have incompatible shapes."""


class NumericsError(RulforgeError):
    """An operation produced a NaN or Inf value."""


class DivergenceError(RulforgeError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}; try a lower learning rate")


class CorruptionError(RulforgeError):
    """A stored artifact failed magic, version, or checksum validation."""


class ConfigMismatchError(RulforgeError):
    """A checkpoint's stored config differs from the expected one."""
