"""Exception types raised across the package."""

import numpy as np


class DimensionMismatchError(ValueError):
    """Two operands live on manifolds of different dimensions."""

    def __init__(self, shape_a, shape_b, what="points"):
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__(f"{what} have incompatible shapes {self.shape_a} and {self.shape_b}")


class CutLocusError(ValueError):
    """The Grassmann logarithm is undefined because a principal angle reaches pi/2."""

    def __init__(self, max_angle):
        self.max_angle = float(max_angle)
        super().__init__(
            f"largest principal angle {self.max_angle:.12g} is at or beyond the cut locus (pi/2)"
        )


class NotSPDError(ValueError):
    def __init__(self, min_eigenvalue, msg=None):
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(msg or f"matrix is not positive definite (min eigenvalue {self.min_eigenvalue:.6g})")


class ConfigurationError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    """Observability extraction found fewer significant singular values than requested."""

    def __init__(self, required, spectrum, window=None):
        self.required = int(required)
        self.spectrum = np.asarray(spectrum, dtype=float)
        self.window = window
        where = "" if window is None else f" in window starting at {window}"
        super().__init__(
            f"cross-covariance has numerical rank below {self.required}{where}; "
            f"singular values: {np.array2string(self.spectrum, precision=4)}"
        )


class SingularKernelError(ValueError):
    """A kernel matrix needed to be positive definite but is singular; load it first."""


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual=None):
        self.residual = residual
        super().__init__(msg)


class DivergenceError(RuntimeError):
    def __init__(self, step):
        self.step = int(step)
        super().__init__(f"simulation state became non-finite at step {self.step}")
