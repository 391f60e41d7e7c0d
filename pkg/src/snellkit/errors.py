"""Exception hierarchy.

Validation problems derive from ``ValueError``; numerical failures from
``ArithmeticError``. The CLI maps the two families to exit codes 2 and 3.
"""

from __future__ import annotations


class SnellkitError(Exception):
    """Base class for all package errors."""


class ValidationError(SnellkitError, ValueError):
    """Inputs violate a documented precondition."""


class NumericalError(SnellkitError, ArithmeticError):
    """A computation produced a result that breaks a numerical invariant."""


class ProbabilityOutOfRange(ValidationError):
    """Moment-matched transition probabilities left [0, 1].

    Carries the first violating state and a time step that would be accepted
    (``None`` when no time step helps and the grid must be refined instead).
    """

    def __init__(self, message: str, state_index: int, state: float, suggested_dt: float | None):
        super().__init__(message)
        self.state_index = state_index
        self.state = state
        self.suggested_dt = suggested_dt


class PathCapExceeded(ValidationError):
    """Too many paths for exact enumeration; use the Monte Carlo estimator."""


class AbsoluteContinuityViolated(NumericalError):
    """dA is positive at a node where dD^- vanishes."""

    def __init__(self, message: str, nodes: list[tuple[int, int]]):
        super().__init__(message)
        self.nodes = nodes


class NonMonotoneError(NumericalError):
    """A harmonic function or transformed scale lost strict monotonicity."""
