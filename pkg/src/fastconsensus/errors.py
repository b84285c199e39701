"""Exception hierarchy shared by every module in the package."""


class ConsensusError(Exception):
    """Base class for all package errors."""


class NonConvergence(ConsensusError, ArithmeticError):
    """An iterative numerical routine exhausted its iteration budget."""


class Disconnected(ConsensusError, ValueError):
    """The graph is not connected (lambda_2 is numerically zero)."""


class DimensionMismatch(ConsensusError, ValueError):
    """Array shapes do not agree with the graph size or system order."""


class InvalidOptions(ConsensusError, ValueError):
    """Optimizer or experiment options are out of range."""


class DegenerateInput(ConsensusError, ValueError):
    """A polynomial is identically zero or otherwise unusable."""


class EmptyTrajectory(ConsensusError, ValueError):
    """A trajectory holds no samples."""


class ParseError(ConsensusError, ValueError):
    """An edge-list or config file could not be parsed.

    Attributes:
        line: 1-based line number of the offending input line, if known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
