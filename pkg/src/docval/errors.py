"""Exception hierarchy.

Errors fall in three families that the CLI maps to exit codes: invalid input
(usage, exit 1), unreadable or malformed files (exit 2) and value-function
backend failures (exit 3).
"""


class DocvalError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(DocvalError, ValueError):
    """Invalid arguments or violated preconditions."""


class DuplicateMember(ValidationError):
    pass


class TooManyMembers(ValidationError):
    pass


class EmptyMembers(ValidationError):
    pass


class IndexOutOfRange(ValidationError, IndexError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ZeroNorm(ValidationError):
    pass


class AllZeroSimilarity(ValidationError):
    pass


class GameTooLarge(ValidationError):
    pass


class NotAPartition(ValidationError):
    pass


class InfeasibleTarget(ValidationError):
    pass


class SingularSystem(ValidationError):
    pass


class ZeroWeightSum(ValidationError):
    pass


class EmptyCorpus(ValidationError):
    pass


class NonpositiveTotalValue(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class EmptySampler(ValidationError):
    pass


class MemberMismatch(ValidationError):
    pass


class TruthUnavailable(ValidationError):
    pass


class InsufficientReplicates(ValidationError):
    pass


class IterationLimitExceeded(DocvalError, RuntimeError):
    pass


class SchemaError(DocvalError):
    """A file does not follow its documented layout."""

    exit_code = 2


class MissingTableEntry(SchemaError, KeyError):
    """A table-backed game was asked for a coalition it does not store."""


class IncompleteTable(SchemaError):
    pass


class BackendError(DocvalError):
    """The value-function backend failed."""

    exit_code = 3


class BackendUnavailable(BackendError):
    pass


class ScoreParseError(BackendError):
    pass


class MalformedResponse(BackendError):
    pass
