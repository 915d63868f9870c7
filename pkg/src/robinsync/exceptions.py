"""Exception hierarchy shared by all modules."""


class RobinSyncError(Exception):
    """Base class for every error raised by this package."""


class PartitionError(RobinSyncError, ValueError):
    """Invalid group division ``0 = n_0 < n_1 < ... < n_p = N``."""


class DimensionError(RobinSyncError, ValueError):
    """Array shapes that do not fit together."""


class MatrixConditionError(RobinSyncError):
    """An algebraic hypothesis on the coupling matrices is violated."""


class IncompatibleMatrixError(MatrixConditionError):
    """A matrix does not map ``Ker(C_p)`` into itself.

    Attributes
    ----------
    worst_pair : tuple of int
        Zero-based ``(s, r)`` block pair with the largest spread of
        block-row sums.
    violation : float
        That spread.
    """

    def __init__(self, message, worst_pair=None, violation=None):
        super().__init__(message)
        self.worst_pair = worst_pair
        self.violation = violation


class RankConditionError(MatrixConditionError):
    """``rank(C_p D) != N - p``."""


class NotRealSpectrum(MatrixConditionError):
    """Matrix has a complex-conjugate eigenvalue pair."""


class NotDiagonalizable(MatrixConditionError):
    """Matrix is (numerically) defective."""


class DegenerateFamilyError(MatrixConditionError):
    """Family cannot be made biorthogonal to the kernel basis."""


class CFLViolation(RobinSyncError, ValueError):
    """Time step too large for the explicit scheme."""


class BlowUpError(RobinSyncError, FloatingPointError):
    """Non-finite values appeared during time stepping."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SynthesisError(RobinSyncError):
    """Control synthesis failed (empty basis, solver non-convergence)."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = residual_history
