"""Exception hierarchy shared across the package."""


class SleepdError(Exception):
    """Base class for every error raised by sleepd."""


# memory core
class MemoryStateError(SleepdError):
    pass


class FinishedState(MemoryStateError):
    """Mutation attempted after finish_rethinking."""


class ReadOnlyViolation(MemoryStateError):
    pass


class EmptyTarget(MemoryStateError):
    pass


class LimitExceeded(MemoryStateError):
    pass


class UnknownLabel(MemoryStateError, KeyError):
    pass


class StepOrderError(MemoryStateError):
    """step_index did not strictly increase."""


# backend
class BackendError(SleepdError):
    pass


class TransportError(BackendError):
    """Retryable failure (network, 429, 5xx)."""


class BackendFailure(BackendError):
    """Non-retryable failure, or retries exhausted."""


class MalformedResponse(BackendError):
    pass


class BudgetRejected(BackendError):
    """Provider refused the requested max_output_tokens."""


class ScriptExhausted(BackendError):
    pass


# orchestration
class MalformedToolCall(SleepdError):
    pass


class NoAnswer(SleepdError):
    """The model never called send_message within the step cap."""

    def __init__(self, message: str, usage=None):
        super().__init__(message)
        self.usage = usage


class MixedContexts(SleepdError):
    pass


# store
class StoreError(SleepdError):
    pass


class StorageFailure(StoreError):
    pass


class UnknownContext(StoreError, KeyError):
    pass


class MismatchedId(StoreError):
    pass


class NoDerived(StoreError):
    pass


class IndexOutOfRange(StoreError, IndexError):
    pass


# datasets
class DatasetError(SleepdError):
    pass


class NoStatement(DatasetError):
    pass


class SchemaViolation(DatasetError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DuplicateId(SchemaViolation):
    pass


class ParseFailure(DatasetError):
    pass


class MissingScore(DatasetError):
    pass


class EmptyTruth(DatasetError):
    pass


# evaluation
class EvaluationError(SleepdError):
    pass


class ZeroQueries(EvaluationError):
    pass


class EmptyGroup(EvaluationError):
    pass


class MissingBin(EvaluationError):
    pass


class IoFailure(EvaluationError):
    pass
