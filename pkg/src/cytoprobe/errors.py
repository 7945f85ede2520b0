"""Exception taxonomy shared across the package.

Every error that crosses a module boundary carries a machine-readable
``code`` so the HTTP layer and the CLI can map it without string matching.
"""

from __future__ import annotations


class CytoprobeError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context


class ValidationError(CytoprobeError):
    """Bad input: wrong value, missing field, unmet precondition."""

    code = "validation"


class ShapeError(ValidationError):
    """Array dimensions do not line up."""

    code = "shape"


class StateError(CytoprobeError):
    """Operation called in the wrong state (e.g. backward before forward)."""

    code = "state"


class NumericError(CytoprobeError):
    """Non-finite value produced where finite math was promised.

    ``checkpoint`` optionally references the last stable model state so a
    caller can persist it before dying.
    """

    code = "numeric"

    def __init__(self, message: str, checkpoint=None, **context):
        super().__init__(message, **context)
        self.checkpoint = checkpoint


class ConflictError(CytoprobeError):
    """Duplicate submission or an already-answered trial."""

    code = "conflict"


class NotFoundError(CytoprobeError):
    """Referenced entity does not exist."""

    code = "not_found"


class UndefinedRateError(CytoprobeError):
    """A rate was requested over zero trials."""

    code = "undefined_rate"
