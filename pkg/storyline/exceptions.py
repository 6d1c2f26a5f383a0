"""
Error hierarchy for the storyline toolkit.

Every error carries a stable ``code`` string and the process ``exit_code`` the
command line reports for it (1 for validation problems, 2 for runtime/data problems).
"""


class StorylineError(Exception):
    """Base class for all domain errors."""

    code = "storyline_error"
    exit_code = 2

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail

    def to_dict(self):
        return {"error": True, "code": self.code, "message": self.detail}


class InputValidationError(StorylineError):
    """Bad arguments, configuration values or violated preconditions."""

    code = "validation_error"
    exit_code = 1


class DimensionMismatchError(StorylineError):
    code = "dimension_mismatch"


class CorruptFormatError(StorylineError):
    code = "corrupt_format"


class TimestampParseError(StorylineError):
    code = "timestamp_parse"


class ManifestError(StorylineError):
    code = "manifest_invalid"


class NonFiniteError(StorylineError):
    code = "non_finite"


class ProbabilityError(StorylineError):
    """A categorical distribution that is negative or not normalized."""

    code = "bad_distribution"


class AlbumTooShortError(StorylineError):
    code = "album_too_short"


class InfeasibleRangeError(StorylineError):
    code = "infeasible_range"


class InsufficientDataError(StorylineError):
    code = "insufficient_data"


class CombinatorialLimitError(StorylineError):
    code = "combinatorial_limit"
