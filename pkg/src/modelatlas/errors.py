"""Exception hierarchy shared by all modelatlas modules."""

from __future__ import annotations


class AtlasError(Exception):
    """Base class for every error raised by modelatlas."""


# graph model
class DuplicateId(AtlasError):
    pass


class UnknownId(AtlasError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class UnknownEndpoint(UnknownId):
    pass


class CycleCreated(AtlasError):
    pass


class IllegalMultiParent(AtlasError):
    pass


class InvalidNode(AtlasError, ValueError):
    pass


# ingestion
class MalformedContainer(AtlasError, ValueError):
    pass


class SelectorTooNarrow(AtlasError, ValueError):
    pass


class MalformedRecord(AtlasError, ValueError):
    """A metadata record that could not be turned into a ModelNode.

    ``line`` is the 1-based line number (or CSV row) and ``model_id`` the id
    when it is known, so callers can report problems per record.
    """

    def __init__(self, message: str, line: int | None = None, model_id: str | None = None):
        super().__init__(message)
        self.line = line
        self.model_id = model_id

    def __str__(self) -> str:
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.model_id is not None:
            where.append(f"id {self.model_id!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        return prefix + super().__str__()


class HttpError(AtlasError):
    def __init__(self, model_id: str, status: int | None, message: str):
        super().__init__(message)
        self.model_id = model_id
        self.status = status

    def __str__(self) -> str:
        status = f"HTTP {self.status}" if self.status is not None else "network error"
        return f"{self.model_id}: {status}: {super().__str__()}"


# distances / charting
class MixedFingerprintSchema(AtlasError, ValueError):
    pass


class MissingFingerprint(AtlasError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EmptyInput(AtlasError, ValueError):
    pass


class TooFewNeighbors(AtlasError, ValueError):
    pass


class DisconnectedInput(AtlasError, ValueError):
    pass


# imputation / evaluation
class EmptyLabelSet(AtlasError, ValueError):
    pass


class NoLabeledNodes(AtlasError, ValueError):
    pass


class KeyMismatch(AtlasError, ValueError):
    pass


class NodeSetMismatch(AtlasError, ValueError):
    pass


class InfeasibleSpec(AtlasError, ValueError):
    pass
