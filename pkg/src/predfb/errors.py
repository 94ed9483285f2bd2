"""Exception hierarchy.

``ValidationError`` covers bad arguments and failed preconditions (CLI exit
code 2); ``NumericalError`` covers failures that only show up while computing
(CLI exit code 3).
"""


class PredfbError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PredfbError, ValueError):
    """Invalid input, dimension mismatch or violated precondition."""


class CoverageError(ValidationError):
    """A query reaches outside the stored span of an input history."""


class NumericalError(PredfbError, ArithmeticError):
    """A computation could not be completed in floating point."""


class NonFiniteStateError(NumericalError):
    """An integrator produced an inf/nan state."""

    def __init__(self, message, step=None, time=None):
        super().__init__(message)
        self.step = step
        self.time = time


class GridCountOverflow(NumericalError):
    """The grid count required by the accuracy target exceeds the cap."""

    def __init__(self, required, cap):
        super().__init__(
            f"grid count {required:.6g} required, cap is {cap}; "
            "raise n_max or relax the accuracy target"
        )
        self.required = required
        self.cap = cap


class BracketError(NumericalError):
    """Bisection could not bracket a root, usually a non-monotone handle."""

    def __init__(self, handle, message):
        super().__init__(f"{handle}: {message}")
        self.handle = handle


class ConvergenceError(NumericalError):
    """An iteration hit its cap before reaching tolerance."""
