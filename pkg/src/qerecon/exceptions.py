"""Exception hierarchy.

Argument problems raise plain ``ValueError`` subclasses so they compose with
numpy/sklearn callers; numerical failures get their own branch so the CLI can
map them to a distinct exit code.
"""


class QeReconError(Exception):
    """Base class for all package errors."""


class ConfigurationError(QeReconError, ValueError):
    """Invalid or inconsistent configuration (missing stats, bad method, ...)."""


class NumericalError(QeReconError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""


class NotPSDError(NumericalError):
    def __init__(self, eigenvalue, threshold):
        self.eigenvalue = float(eigenvalue)
        self.threshold = float(threshold)
        super().__init__(
            f"matrix is not PSD: eigenvalue {self.eigenvalue:.6g} "
            f"below tolerance -{self.threshold:.6g}"
        )


class ConvergenceError(NumericalError):
    """An iterative LAPACK solver failed to converge."""
