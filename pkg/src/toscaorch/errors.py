"""Exception hierarchy shared by every toscaorch module."""

from __future__ import annotations


class ToscaOrchError(Exception):
    """Base class for all errors raised by this package."""


# -- type system / model -------------------------------------------------


class ToscaError(ToscaOrchError):
    """An error that can be pinned to a node (or to the whole template)."""

    def __init__(self, message: str, node: str | None = None) -> None:
        super().__init__(message)
        self.node = node


class UnknownType(ToscaError):
    pass


class CyclicDerivation(ToscaError):
    pass


class InvalidDerivation(ToscaError):
    """A derived type tried to drop a required property of its parent."""


class IncompatibleOperand(ToscaError):
    """A constraint clause cannot be applied to a value of this kind."""


class UnknownReference(ToscaError):
    pass


class AttributeUnavailable(ToscaError):
    pass


class InvalidScalar(ToscaError):
    pass


# -- parsing ---------------------------------------------------------------


class ToscaSyntaxError(ToscaError):
    """Malformed document; ``line``/``column`` are 1-based when known."""

    def __init__(
        self,
        message: str,
        line: int | None = None,
        column: int | None = None,
        node: str | None = None,
    ) -> None:
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where, node=node)
        self.line = line
        self.column = column


class UnsupportedVersion(ToscaError):
    pass


class UnresolvedImport(ToscaError):
    pass


class DuplicateTypeConflict(ToscaError):
    pass


class DanglingRequirement(ToscaError):
    pass


class CyclicTopology(ToscaError):
    pass


# -- translation -----------------------------------------------------------


class UntranslatableNode(ToscaError):
    pass


class NoMatchingFlavor(ToscaError):
    pass


class NoMatchingImage(ToscaError):
    pass


class AmbiguousImage(ToscaError):
    def __init__(self, message: str, candidates: list[str], node: str | None = None) -> None:
        super().__init__(message, node=node)
        self.candidates = candidates


# -- simulator -------------------------------------------------------------


class BackendError(ToscaOrchError):
    """Raised by a simulated provider."""


class QuotaExceeded(BackendError):
    pass


class NoSuchImage(BackendError):
    pass


class NoSuchFlavor(BackendError):
    pass


class BackendRejected(BackendError):
    pass


class NoPublicAddressAvailable(BackendError):
    pass


class DuplicateImage(BackendError):
    pass


class UnknownInstance(ToscaOrchError):
    pass


# -- orchestrator / elasticity ---------------------------------------------


class AuthFailed(ToscaOrchError):
    pass


class ValidationFailed(ToscaOrchError):
    def __init__(self, message: str, report) -> None:
        super().__init__(message)
        self.report = report


class StoreUnavailable(ToscaOrchError):
    pass


class UnknownDeployment(ToscaOrchError):
    pass


class InvalidTransition(ToscaOrchError):
    pass


class NoCapableProvider(BackendError):
    pass


class OutOfBounds(ToscaOrchError):
    pass


class UnknownCluster(ToscaOrchError):
    pass


class SlotsExceedSlaveCapacity(ToscaOrchError):
    pass


# -- scenarios ---------------------------------------------------------------


class ScenarioError(ToscaOrchError):
    """A malformed scenario step; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None) -> None:
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class AssertFailed(ScenarioError):
    pass
