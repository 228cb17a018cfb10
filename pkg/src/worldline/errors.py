"""Shared error taxonomy. Every error carries a stable ``code`` used by the HTTP layer."""

from __future__ import annotations


class WorldLineError(Exception):
    """Base class for all engine errors."""

    code = "internal"


class InvalidArgumentError(WorldLineError):
    code = "invalid-argument"


class NotFoundError(WorldLineError):
    code = "not-found"


class StageLimitError(WorldLineError):
    """Raised when expanding a node already at the configured deduction depth."""

    code = "stage-limit"


class IllegalStateError(WorldLineError):
    """Raised when a session operation is not legal in the current state."""

    code = "illegal-state"


class BusyError(WorldLineError):
    """Second concurrent mutating call on the same session."""

    code = "busy"


class ProviderError(WorldLineError):
    """Failure talking to (or parsing output of) a generative provider.

    ``kind`` is one of: timeout, status, empty, parse, transport.
    Calibration attaches ``partial_traces`` when a path-level pass aborts midway.
    """

    code = "provider-error"

    def __init__(self, message: str, kind: str = "transport"):
        super().__init__(message)
        self.kind = kind
        self.partial_traces: list = []


class StorageError(WorldLineError):
    """Disk read/write failure (the io-error of the session store and media dir)."""

    code = "io-error"


class FormatError(WorldLineError):
    """Unparseable snapshot or dataset file."""

    code = "format-error"


class ValidationError(WorldLineError):
    """A dataset entry parsed but violates a structural rule."""

    code = "validation-error"

    def __init__(self, message: str, entry_id: str = "", rule: str = ""):
        super().__init__(message)
        self.entry_id = entry_id
        self.rule = rule


class RunError(WorldLineError):
    """A batch run produced no usable results (e.g. every entry was skipped)."""

    code = "run-error"
