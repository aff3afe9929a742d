"""Exception types shared by every verde module.

Each error carries a stable ``code`` string that the gateway maps onto
OpenAI-style error bodies, so API clients see consistent machine-readable
errors regardless of which subsystem raised them.
"""

from __future__ import annotations


class VerdeError(Exception):
    """Base class for all domain errors."""

    code = "error"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code


class ValidationError(VerdeError):
    code = "validation_error"


class NotFound(VerdeError):
    code = "not_found"


class AuthError(VerdeError):
    code = "auth_error"


class Forbidden(VerdeError):
    code = "forbidden"


class ConflictError(VerdeError):
    code = "conflict"


class InsufficientBudget(VerdeError):
    code = "insufficient_budget"


class VersionConflict(VerdeError):
    code = "version_conflict"


class DimensionMismatch(VerdeError):
    code = "dimension_mismatch"


class UnsupportedFormat(VerdeError):
    code = "unsupported_format"


class IoError(VerdeError):
    code = "io_error"


class EncodingError(VerdeError):
    code = "encoding_error"


class UpstreamError(VerdeError):
    """Upstream backend returned a non-success response."""

    code = "upstream_error"

    def __init__(self, status: int, body_excerpt: str = ""):
        super().__init__(f"upstream returned {status}: {body_excerpt[:200]}")
        self.status = status
        self.body_excerpt = body_excerpt[:200]


class UpstreamTimeout(VerdeError):
    code = "upstream_timeout"
