"""Exception hierarchy shared by every stage.

Data errors (bad input files, impossible splits) map to CLI exit code 2;
invariant breaches (inconsistent bundles, impossible traces) map to exit 3.
"""


class AdeError(Exception):
    """Base class for all package errors."""


class DataError(AdeError):
    """Input data could not be used as given."""


class InvariantError(AdeError):
    """An internal consistency rule was violated."""


# corpus
class FieldCountError(DataError):
    pass


class OffsetParseError(DataError):
    pass


class FormatError(DataError):
    pass


class SurfaceNotFound(DataError):
    pass


class SplitSizeError(DataError, ValueError):
    pass


# textproc
class NoTokenOverlap(DataError, ValueError):
    pass


class IndexOutOfRange(AdeError, IndexError):
    pass


# nerstage
class EmptyLexicon(DataError):
    pass


# neuralcore
class DomainError(AdeError, ValueError):
    pass


class NonFiniteGradient(AdeError, FloatingPointError):
    pass


class ShapeMismatch(InvariantError, ValueError):
    pass


# relevance / spanqa
class SingleClassFold(DataError):
    pass


class EmptyFold(DataError):
    pass


class GoldSpanUnmappable(DataError):
    pass


class GoldMasked(AdeError, ValueError):
    pass


class NoValidSpan(AdeError, ValueError):
    pass


class MaskMismatch(AdeError, ValueError):
    pass


# evalx
class InconsistentTrace(InvariantError, ValueError):
    pass


class KTooSmall(DataError, ValueError):
    pass


class KTooLarge(DataError, ValueError):
    pass


# pipeline
class VersionMismatch(DataError):
    pass


class CorruptBundle(DataError):
    pass


class StageError(AdeError):
    """Wraps an error raised while training one stage; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
