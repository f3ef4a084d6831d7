"""Exception types shared across the engine."""

from __future__ import annotations


class FolioError(Exception):
    """Base class for all engine errors."""


# --- corpus ---------------------------------------------------------------

class MalformedManifest(FolioError):
    """A bundle manifest line failed validation."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"manifest line {line}: {reason}")


class MissingImage(FolioError):
    """A referenced image file does not exist."""

    def __init__(self, ref: str):
        self.ref = ref
        super().__init__(f"missing image: {ref}")


class DuplicateDocId(FolioError):
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"document already ingested: {doc_id}")


class InvalidChunking(FolioError):
    pass


# --- embedding providers --------------------------------------------------

class EmptyInput(FolioError):
    pass


class ProviderUnreachable(FolioError):
    pass


class ProviderBadResponse(FolioError):
    pass


# --- numerics -------------------------------------------------------------

class DimMismatch(FolioError):
    pass


class ZeroProjection(FolioError):
    """Projection output norm below threshold; cannot normalize."""


class NonFiniteLoss(FolioError):
    """Training diverged; carries the epoch where it happened."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}")


class NotDivisible(FolioError):
    pass


# --- vector index ---------------------------------------------------------

class EmptyIndex(FolioError):
    pass


class EfTooSmall(FolioError):
    pass


class CorruptFile(FolioError):
    """A persisted file failed magic/length/checksum validation."""

    def __init__(self, offset: int, reason: str):
        self.offset = offset
        self.reason = reason
        super().__init__(f"corrupt file at offset {offset}: {reason}")


# --- chat / rag -----------------------------------------------------------

class BudgetTooSmall(FolioError):
    pass


class SessionNotFound(FolioError):
    def __init__(self, session_id: str):
        self.session_id = session_id
        super().__init__(f"unknown session: {session_id}")


class TurnOrderViolation(FolioError):
    """Roles in a chat session must strictly alternate, starting with User."""


# --- evaluation -----------------------------------------------------------

class EmptyBenchmark(FolioError):
    pass


class InvalidTrainLog(FolioError):
    pass
