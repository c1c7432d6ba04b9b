"""Exception hierarchy.

Validation problems (bad input, rank deficiency) derive from ``ValidationError``;
optimization failures (infeasible constraints, separation, budgets) derive from
``SolverError``. The CLI maps the first family to exit code 1 and the second
to exit code 2.
"""

from __future__ import annotations


class RegContrastError(Exception):
    pass


class ValidationError(RegContrastError, ValueError):
    pass


class RankDeficiencyError(ValidationError):
    """Design matrix is not of full column rank.

    ``columns`` holds the indices of the columns found to be linearly
    dependent on the others.
    """

    def __init__(self, message: str, columns=()):
        super().__init__(message)
        self.columns = tuple(int(c) for c in columns)


class SolverError(RegContrastError):
    pass


class InfeasibleError(SolverError):
    """Constraint set has no solution.

    ``dimension`` names the offending covariate/constraint when it can be
    identified; ``min_delta`` carries the smallest feasible per-covariate
    tolerance when the solver searched for it.
    """

    def __init__(self, message: str, dimension=None, min_delta=None):
        super().__init__(message)
        self.dimension = dimension
        self.min_delta = min_delta


class SeparationError(SolverError):
    def __init__(self, message: str, direction=None):
        super().__init__(message)
        self.direction = direction


class ConvergenceError(SolverError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class BudgetExceededError(SolverError):
    pass
