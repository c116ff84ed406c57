"""Exception types shared across the package."""


class PintError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PintError, ValueError):
    """Invalid parameters or out-of-range configuration."""


class AssemblyError(PintError):
    """Failure while assembling discrete operators or load vectors."""


class NumericalError(PintError):
    """A numerical kernel failed (singular coarse solve, eigen failure, ...)."""


class BlockSolveError(PintError):
    """A per-time-block solve raised; ``block`` names the failing block."""

    def __init__(self, block: int, cause: BaseException):
        super().__init__(f"time block {block} failed: {cause!r}")
        self.block = block
        self.__cause__ = cause
