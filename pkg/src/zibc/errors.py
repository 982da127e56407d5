"""Exception hierarchy shared by the estimation, correction and CLI layers.

The CLI maps :class:`InputError` subclasses to exit code 2 and
:class:`NumericalError` subclasses to exit code 3.
"""


class ZibcError(Exception):
    """Base class for every error raised by this package."""


class InputError(ZibcError, ValueError):
    """An input violates an operation's contract (shape, range, parse)."""


class DomainError(InputError):
    """A scalar argument lies outside the domain of a formula."""


class NumericalError(ZibcError, ArithmeticError):
    """A computation failed numerically (overflow, singular matrix, ...)."""


class SingularDesignError(NumericalError):
    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"design matrix is rank deficient at column {column!r}")


class DegenerateOutcomeError(NumericalError):
    """The likelihood has no finite maximiser for this outcome vector."""


class ConvergenceError(NumericalError):
    def __init__(self, message, last_iterate=None, iterations=None):
        self.last_iterate = last_iterate
        self.iterations = iterations
        super().__init__(message)


class DegenerateArmError(NumericalError):
    """One trial arm carries no usable information for the zero-rate solver."""

    def __init__(self, message, arm=None, study_id=None):
        self.arm = arm
        self.study_id = study_id
        prefix = ""
        if study_id is not None:
            prefix += f"study {study_id!r}: "
        if arm is not None:
            prefix += f"{arm} arm: "
        super().__init__(prefix + message)


class CalibrationError(InputError):
    def __init__(self, message, attainable=None):
        self.attainable = attainable
        super().__init__(message)
