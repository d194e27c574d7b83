"""Exception hierarchy.

All package errors derive from :class:`BinmixError` so callers can catch one
base class.  The CLI maps subclasses to exit codes: validation errors exit 2,
convergence/optimization failures exit 3, I/O problems exit 4.
"""


class BinmixError(Exception):
    """Base class for all binmix errors."""


class ValidationError(BinmixError, ValueError):
    """Invalid inputs: bad shapes, out-of-range values, schema violations."""


class OptimizationError(BinmixError):
    """An inner optimizer hit a non-finite objective or other fatal state."""


class ConvergenceError(BinmixError):
    """A fitting procedure could not produce a usable estimate."""


class DegenerateComponentError(ConvergenceError):
    """A mixture component lost all posterior weight during an update."""


class GenerationError(BinmixError):
    """A simulation setup produced an invalid per-row pattern distribution."""


class ConvergenceWarning(UserWarning):
    """Emitted when an iterative routine stops at its iteration cap."""
