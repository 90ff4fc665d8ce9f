from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class ContrastiveEmbedError(Exception):
    pass


class ShapeError(ContrastiveEmbedError, ValueError):
    pass


class ValidationError(ContrastiveEmbedError, ValueError):
    pass


class StaleCacheError(ValidationError):
    pass


class ConfigurationError(ContrastiveEmbedError, ValueError):
    pass


class CheckpointFormatError(ContrastiveEmbedError, ValueError):
    pass


class DatasetError(ContrastiveEmbedError):
    pass


@dataclass(frozen=True)
class DatasetFileMissingError(DatasetError):
    path: Path

    def __str__(self) -> str:
        return f"dataset file not found: {self.path}"


@dataclass(frozen=True)
class DatasetSizeError(DatasetError):
    path: Path
    expected: int
    actual: int

    def __str__(self) -> str:
        return f"unexpected size for {self.path}: expected {self.expected} bytes, got {self.actual}"


@dataclass(frozen=True)
class LabelRangeError(DatasetError):
    field: str
    value: int
    limit: int
    record: int

    def __str__(self) -> str:
        return (
            f"{self.field} label {self.value} out of range (must be < {self.limit}) "
            f"in record {self.record}"
        )
