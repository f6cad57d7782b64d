"""Exception types shared across the pipeline.

Names match the operation contracts; the CLI maps them onto exit-code
categories (data error vs. backend unavailable vs. prerequisite).
"""


class SeedMineError(Exception):
    """Base class for all pipeline errors."""


# --- text / embedding ---------------------------------------------------


class EmptyText(SeedMineError):
    """Operation requires nonempty text."""


class ZeroVector(SeedMineError):
    """A vector with zero norm cannot be normalized or compared."""


class DimensionMismatch(SeedMineError):
    """Vector dimensions disagree with the index or contract dimension."""


class RemoteUnavailable(SeedMineError):
    """Remote embedding service unreachable after retries."""


# --- index --------------------------------------------------------------


class InvalidParams(SeedMineError):
    """Index parameters violate their invariants."""


class DuplicateId(SeedMineError):
    """An id was inserted twice into the same index."""


class IoFailure(SeedMineError):
    """Underlying I/O failed while persisting or loading."""


class CorruptFile(SeedMineError):
    """A persisted artifact failed structural or checksum validation."""


class CorruptIndex(CorruptFile):
    """Index file truncated or checksum mismatch."""


class CorruptModel(CorruptFile):
    """Classifier model file truncated or checksum mismatch."""


class VersionMismatch(SeedMineError):
    """Persisted artifact written by an unsupported format version."""


# --- seed generation ----------------------------------------------------


class UnknownDomain(SeedMineError):
    """Domain name not in the industry choice set."""


class GenerationUnavailable(SeedMineError):
    """Text-generation backend unreachable or failure rate too high."""


class UnparseableGeneration(SeedMineError):
    """Generation could not be parsed into seed fields after retries."""


class MissingField(SeedMineError):
    """A required response-format header is absent or empty."""

    def __init__(self, field: str, message: str | None = None):
        self.field = field
        super().__init__(message or f"missing or empty field: {field}")


# --- mining / classification --------------------------------------------


class InsufficientData(SeedMineError):
    """Too few records to train or split reliably."""


class NonFiniteLoss(SeedMineError):
    """Training loss diverged even after learning-rate reduction."""


# --- evaluation ---------------------------------------------------------


class TooShort(SeedMineError):
    """Text below the minimum token count for this metric."""


class MalformedJudgement(SeedMineError):
    """Judge response missing tags or containing unmappable ratings."""


# --- mixing -------------------------------------------------------------


class InsufficientDomainTokens(SeedMineError):
    """Domain pool exhausted before its token budget was met."""


class InsufficientGeneralTokens(SeedMineError):
    """General pool exhausted before its token budget was met."""


class MissingDocument(SeedMineError):
    """A planned doc id could not be resolved in the store."""

    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"document not found in store: {doc_id}")
