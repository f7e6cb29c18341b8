"""Exception hierarchy shared by every module of the toolkit."""


class FsdeError(Exception):
    """Base class for all toolkit errors."""


class InvalidParams(FsdeError, ValueError):
    pass


class NonConvergent(FsdeError, ArithmeticError):
    """A series hit its term cap before the tail bound was met."""


class DimensionMismatch(FsdeError, ValueError):
    pass


class SingularArgument(FsdeError, ValueError):
    """A kernel or dominating function was evaluated at a non-positive time."""


class NotGridPoint(FsdeError, ValueError):
    pass


class TailTooLarge(FsdeError, ArithmeticError):
    pass


class UnknownModel(FsdeError, KeyError):
    pass


class NonFinite(FsdeError, FloatingPointError):
    """A simulated state left the finite range."""

    def __init__(self, message, paths=()):
        super().__init__(message)
        self.paths = tuple(paths)


class CapExceeded(FsdeError, ValueError):
    pass


class CholeskyFailure(FsdeError, ArithmeticError):
    pass


class DegenerateInput(FsdeError, ValueError):
    pass


class TooFewSamples(FsdeError, ValueError):
    pass


class ConfigInvalid(FsdeError, ValueError):
    pass
