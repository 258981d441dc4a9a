"""Exception hierarchy for the capgap engine.

Every error raised by the engine derives from :class:`EngineError`, so callers
can catch one base class at the CLI boundary. File-format problems carry the
byte offset at which parsing failed; decoder transport problems carry the
request id they belong to.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all capgap errors."""


# --- statistics / correction -------------------------------------------------

class StatsInsufficientData(EngineError):
    """Fewer than two sample rows were supplied for statistics."""


class InvalidEmbedding(EngineError):
    """An embedding contains NaN or infinite values."""


class DimMismatch(EngineError):
    """Two embedding objects disagree on dimensionality."""


class PairMismatch(EngineError):
    """Paired matrices have different row counts."""


# --- datastore ---------------------------------------------------------------

class BuildError(EngineError):
    """Datastore inputs are inconsistent (counts or dims)."""


class DuplicateId(EngineError):
    """A caption id occurs more than once."""


class EmptyStore(EngineError):
    """Search was attempted against a store with no rows."""


class InsufficientStore(EngineError):
    """The store is too small for the requested retrieval protocol."""


class FormatError(EngineError):
    """A file failed to parse.

    Attributes:
        offset: byte offset at which the problem was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class IoError(EngineError):
    """An underlying I/O operation failed."""


# --- rerank / prompt / diagnostics ------------------------------------------

class EmptyCandidates(EngineError):
    """Re-ranking was attempted on an empty candidate pool."""


class EmptyPrompt(EngineError):
    """Prompt assembly was attempted with no captions."""


class InvalidK(EngineError):
    """A neighborhood size is non-positive or exceeds the store size."""


# --- decoder transport -------------------------------------------------------

class DecoderError(EngineError):
    """Base class for decoder transport failures.

    Attributes:
        request_id: id of the request that failed.
    """

    def __init__(self, message: str, request_id: str):
        super().__init__(message)
        self.request_id = request_id


class Timeout(DecoderError):
    """The decoder did not answer within the configured deadline."""


class ProtocolError(DecoderError):
    """The decoder answered with a malformed or mismatched frame."""


class NonzeroExit(DecoderError):
    """A subprocess decoder exited with a non-zero status."""
