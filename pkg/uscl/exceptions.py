"""
Exception hierarchy for the uscl app.

Library code raises these; management commands translate them into
``CommandError``: ``ConfigError`` exits 1 (usage), the rest exit 2 (runtime).
"""

from typing import Sequence


class USCLError(Exception):
    """Base class for every error raised by the uscl app."""


class ShapeError(USCLError):
    """Operand shapes do not conform."""

    def __init__(self, op: str, *shapes: Sequence[int]) -> None:
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = " vs ".join(str(list(s)) for s in self.shapes)
        super().__init__(f"{op}: shape mismatch {rendered}")


class NonFiniteError(USCLError):
    """An operation produced NaN or Inf."""

    def __init__(self, op: str) -> None:
        self.op = op
        super().__init__(f"{op}: produced non-finite values")


class TapeError(USCLError):
    """Misuse of a gradient tape (wrong tape, non-scalar output, ...)."""


class ConfigError(USCLError):
    """Invalid configuration value or unknown configuration key."""


class CorpusError(USCLError):
    """A corpus could not be generated or loaded."""


class PairGenerationError(USCLError):
    """A positive pair or batch could not be generated."""


class InsufficientFramesError(PairGenerationError):
    """A frame set is too short for the requested pair strategy."""

    def __init__(self, strategy: str, k: int, required: int, fallback: str) -> None:
        self.strategy = strategy
        self.k = k
        self.required = required
        self.fallback = fallback
        super().__init__(
            f"strategy {strategy} needs K >= {required} frames but the frame set "
            f"has K = {k}; fall back to {fallback} explicitly"
        )


class CheckpointError(USCLError):
    """A checkpoint could not be read, written or used."""


class EvaluationError(USCLError):
    """Downstream evaluation could not run (e.g. unlabeled corpus)."""
