"""Exception types raised by invquant."""


class InvQuantError(Exception):
    """Base class for all package errors."""


class LatticeMismatchError(InvQuantError, ValueError):
    """Two fields or operators live on different lattices."""


class DomainError(InvQuantError, ValueError):
    """A coordinate falls outside the lattice domain."""


class NumericalError(InvQuantError, ArithmeticError):
    """An eigensolver, factorization or normalization failed."""


class ZeroLikelihoodError(NumericalError):
    """A datum has zero probability under the current model.

    ``index`` names the offending datum.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DegeneracyError(NumericalError):
    """A degeneracy prevents a unique answer (e.g. at the Fermi level)."""


class SingularOverlapError(NumericalError):
    """A Slater overlap matrix is singular for some datum."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class PreconditionerError(NumericalError):
    """The iteration matrix is not positive definite on the free subspace."""


class ConvergenceError(InvQuantError, RuntimeError):
    """An iteration did not converge. ``trace`` holds the residual history."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class OptimizerStall(ConvergenceError):
    """Backtracking exhausted without finding a non-decreasing step."""


class ConfigError(InvQuantError, ValueError):
    """Invalid experiment configuration."""


class DataError(InvQuantError, ValueError):
    """Malformed dataset or density (empty, unnormalized, wrong arity)."""
