"""Exception types shared across the package.

Each class carries the process exit code the command line tool maps it to,
so library errors translate to stable, documented shell statuses.
"""


class MvbfaError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class InputError(MvbfaError):
    """Invalid caller-supplied values: shape mismatches, bad labels,
    non-finite data, out-of-range options."""

    exit_code = 2


class FormatError(MvbfaError):
    """Malformed or truncated file contents (dataset, image, or model files)."""

    exit_code = 3


class DegeneracyError(MvbfaError):
    """Numerical degeneracy: a scale matrix lost positive definiteness or a
    density evaluated to NaN."""

    exit_code = 4


class EmptyComponentError(DegeneracyError):
    """A mixture component lost essentially all of its responsibility mass."""


class FitError(MvbfaError):
    """Every attempted start (or every grid cell) failed."""

    exit_code = 5
