"""Exception hierarchy shared by every maskflow module."""


class MaskflowError(Exception):
    """Base class for all errors raised by maskflow."""


class ConfigurationError(MaskflowError, ValueError):
    """Invalid parameters, shapes, unknown config keys."""


class DomainError(MaskflowError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NumericalError(MaskflowError, ArithmeticError):
    """NaN/Inf, failed factorisations, divergent iterations."""


class ResonanceError(NumericalError):
    """Helmholtz wave number hits a discrete Dirichlet eigenvalue."""

    def __init__(self, mode, gap):
        self.mode = mode
        self.gap = gap
        super().__init__(
            f"k^2 is resonant with Dirichlet mode (p, q) = {mode} (|k^2 - lambda| = {gap:.3e})"
        )


class SolverError(NumericalError):
    """An iterative solver failed to converge."""

    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (relative residual {residual:.3e})")


class BlowUpError(NumericalError):
    """A time integrator produced non-finite values."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite vorticity at step {step}")


class DatasetIOError(MaskflowError, OSError):
    """File-format or filesystem failure, always carrying the offending path."""

    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}")
