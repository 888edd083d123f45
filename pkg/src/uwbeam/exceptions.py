"""Exception hierarchy shared by every stage of the simulator."""


class UwbeamError(Exception):
    """Base class for all errors raised by :mod:`uwbeam`."""


class InvalidArgumentError(UwbeamError, ValueError):
    """An argument violates an operation's precondition."""


class InvalidPolynomialError(InvalidArgumentError):
    """LFSR feedback taps do not produce a maximal-length sequence."""


class OutOfBoundsError(InvalidArgumentError):
    """A query time lies outside the support of a sampled signal."""


class SingularDesignError(UwbeamError, ArithmeticError):
    """The beam constraint system is rank deficient at some frequency bin."""

    def __init__(self, message, bin_index=None):
        super().__init__(message)
        self.bin_index = bin_index


class SyncFailureError(UwbeamError):
    """The preamble correlation peak is not distinguishable from sidelobes."""


class TruncatedFrameError(UwbeamError):
    """The received signal ends before all requested symbols were sampled."""


class DivergenceError(UwbeamError, ArithmeticError):
    """The adaptive equalizer lost track (runaway error or non-finite state)."""

    def __init__(self, message, symbol_index=None):
        super().__init__(message)
        self.symbol_index = symbol_index


class StageError(UwbeamError):
    """Wraps a failure raised inside one stage of an experiment pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
