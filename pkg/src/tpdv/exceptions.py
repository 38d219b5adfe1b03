"""Exception types raised across the package."""


class TpdvError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(TpdvError, ValueError):
    """Operands have incompatible shapes."""


class UnsupportedOperation(TpdvError, NotImplementedError):
    """An optional capability (eval, inverse, materialization) is missing."""


class ContractNotApplicable(TpdvError, ValueError):
    """Hypotheses of a bound or identity are not satisfied."""


class EigenvalueConvergenceError(TpdvError, RuntimeError):
    """Iterative eigenvalue estimation did not reach its tolerance.

    The partial estimates are kept on ``lambda_min`` / ``lambda_max``.
    """

    def __init__(self, message, lambda_min=None, lambda_max=None):
        super().__init__(message)
        self.lambda_min = lambda_min
        self.lambda_max = lambda_max


class SolverError(TpdvError, RuntimeError):
    """A preconditioner action failed inside an iteration."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


class ImplicitSolveError(SolverError):
    """The implicit primal substep did not satisfy its defining equation."""


class SpdLossError(TpdvError, RuntimeError):
    """A flow integration lost positive definiteness of the dual metric."""

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state
