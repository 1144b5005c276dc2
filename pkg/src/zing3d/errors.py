"""Exception types shared across the engine."""

from __future__ import annotations


class Zing3DError(Exception):
    """Base class for all engine errors."""


class DomainError(Zing3DError, ValueError):
    """An argument violates a numerical precondition (bad FOV, depth <= 0, ...)."""


class EmptyProjection(Zing3DError):
    """No valid pixel survived mask-guided back-projection; drop the detection."""


class TransportError(Zing3DError):
    """Perception backend unreachable after the configured retries."""


class SchemaError(Zing3DError):
    """A wire payload failed schema validation.

    ``payload`` retains the raw object for diagnostics.
    """

    def __init__(self, message: str, payload: object = None):
        super().__init__(message)
        self.payload = payload


class MaskDecodeError(Zing3DError):
    """Run-length mask data is inconsistent with the frame dimensions."""


class FixtureConflictError(Zing3DError):
    """A fixture file already exists with different content."""


class NoCandidate(Zing3DError):
    """No graph node matches the query."""


class InvalidSelection(Zing3DError):
    """A goal-selection backend returned an unknown node id."""


class VersionError(Zing3DError):
    """A persisted document carries an unsupported schema version."""


class ValidationError(Zing3DError):
    """A graph or manifest failed invariant validation.

    ``violations`` lists one human-readable entry per failed invariant.
    """

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = violations or []


class ManifestError(Zing3DError):
    """A scene directory is missing or carries a malformed manifest."""


class ConfigError(Zing3DError):
    """A run-configuration file is missing, malformed, or carries bad values."""
