"""Exception types shared across the package.

The CLI maps these onto process exit codes, so library code should raise
the most specific type that applies rather than bare ValueError.
"""


class DriftmlpError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(DriftmlpError, ValueError):
    """A caller-supplied argument is out of the documented domain.

    Maps to exit code 2 (configuration error) in the CLI.
    """


class NumericalFailureError(DriftmlpError, ArithmeticError):
    """An iterative numerical procedure failed to converge.

    Maps to exit code 3 in the CLI.
    """


class UnsupportedCombinationError(DriftmlpError):
    """The requested problem/backend combination is not implemented.

    Deliberate refusals (for instance exact sampling with pushing
    penalties) land here, not silent fallbacks. Maps to exit code 4.
    """
