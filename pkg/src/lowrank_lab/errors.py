"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Argument violates a documented precondition."""


class NotPSD(ValueError):
    """Matrix has an eigenvalue below the PSD tolerance."""


class Diverged(RuntimeError):
    """State norm crossed the overflow guard during integration.

    Carries the trajectory recorded so far in ``trajectory`` (may be None
    when divergence happens before the first record).
    """

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class BlowUp(ValueError):
    """Closed-form solution evaluated at or past a finite blow-up time."""

    def __init__(self, index, time):
        super().__init__(f"component {index} blows up at t={time:.6g}")
        self.index = index
        self.time = time


class Unsupported(TypeError):
    """Operation not defined for this loss kind."""


class Infeasible(RuntimeError):
    """Constraint set appears empty along the solver path."""


class NoEscape(ValueError):
    """Requested escape analysis at a point with no positive top eigenvalue."""


class NoAlignment(ValueError):
    """Initial direction is orthogonal to the dominant eigenvector."""


class ClassificationMismatch(RuntimeError):
    """Numerical spectrum does not match the predicted eigenvalue multiset."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals
