"""Exception hierarchy shared by every module.

Each class carries the CLI exit code it maps to, so the command-line
front end can translate failures without a lookup table of its own.
"""


class GenvecError(Exception):
    exit_code = 1


class DimensionError(GenvecError, ValueError):
    exit_code = 3


class ParameterError(GenvecError, ValueError):
    exit_code = 4


class DegenerateInputError(GenvecError, ValueError):
    exit_code = 5


class FormatError(GenvecError, ValueError):
    """Malformed embedding file, checkpoint or TSV input."""

    exit_code = 6


class TrainingError(GenvecError, RuntimeError):
    """Raised when the loss goes non-finite.

    ``last_good`` holds the parameters from the last finite step, when any.
    """

    exit_code = 7

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class SamplingError(GenvecError, RuntimeError):
    exit_code = 8
