"""Exception types shared across the toolkit.

Every raised error carries a short machine-readable ``code`` (e.g.
``"crop-too-large"``) so callers and tests can match on the failure kind
without parsing prose.
"""

from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all toolkit errors."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}" if message else code)


class DataError(ToolkitError):
    """Bad or missing input data (CLI exit code 2)."""


class DivergedError(ToolkitError):
    """Training produced a non-finite loss (CLI exit code 3)."""

    def __init__(self, message: str = "", epoch: int | None = None):
        self.epoch = epoch
        super().__init__("diverged", message)


class UsageError(ToolkitError):
    """Invalid invocation or configuration (CLI exit code 1)."""
