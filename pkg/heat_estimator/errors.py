from __future__ import annotations


class HeatEstimatorError(Exception):
    """Base class for every failure raised inside heat_estimator."""


class NumericFailure(HeatEstimatorError):
    """An iterative solve did not reach its tolerance.

    Args:
        message (str): Human readable description.
        residual (float): Relative residual of the last iterate.
        iterations (int): Number of iterations performed.
        step (int | None): Time-step index when raised from the time marching loop.
    """

    def __init__(
        self,
        message: str,
        residual: float,
        iterations: int,
        step: int | None = None,
    ):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.step = step


class IntegrityError(HeatEstimatorError):
    """An internal consistency check failed (compatibility, singular KKT, self-check)."""
