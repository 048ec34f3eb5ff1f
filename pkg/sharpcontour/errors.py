"""Exception hierarchy shared by every SharpContour module."""

from __future__ import annotations


class SharpContourError(Exception):
    """Base class for all library errors."""


class GeometryError(SharpContourError):
    """Invalid or degenerate polygon input."""


class FieldError(SharpContourError):
    """Probability field construction or evaluation failure."""


class ConfigError(SharpContourError):
    """Configuration failed validation."""


class ParseError(SharpContourError):
    """Malformed input file. `offset` is the byte offset of the problem, when known."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class TrainingError(SharpContourError):
    """IPC or baseline training failure."""


class HarnessError(SharpContourError):
    """A benchmark cell failed; names the shape and config that failed."""

    def __init__(self, message: str, shape: str | None = None, config_hash: str | None = None):
        self.shape = shape
        self.config_hash = config_hash
        where = []
        if shape is not None:
            where.append(f"shape={shape}")
        if config_hash is not None:
            where.append(f"config={config_hash}")
        if where:
            message = f"{message} [{', '.join(where)}]"
        super().__init__(message)
