"""Exception types raised by the solvers."""


class DimensionError(ValueError):
    """Array shapes do not match the grid or each other."""


class StabilityError(ValueError):
    """Crank-Nicolson system would be singular or indefinite for this step."""


class HypothesisError(ValueError):
    """Problem data violate the ball-exclusion or decay hypotheses."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InfeasibleBracketError(RuntimeError):
    """No horizon in the search window attains the requested control bound."""


class NonConvergenceError(RuntimeError):
    """An inner minimization stopped at ``max_iters`` without certificate."""

    def __init__(self, message, T=None, result=None):
        super().__init__(message)
        self.T = T
        self.result = result


class UniqueContinuationError(ArithmeticError):
    """Adjoint state vanished on omega at some sampled time."""
