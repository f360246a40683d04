"""Exception and warning types shared across the package."""


class GBMDSError(Exception):
    """Base class for all errors raised by this package."""


class InputError(GBMDSError, ValueError):
    """Invalid user input: malformed data, bad configuration, broken invariants."""


class MetricError(InputError):
    """A dissimilarity metric was applied to inputs outside its domain."""


class NumericalError(GBMDSError, ArithmeticError):
    """A computation lost all precision or produced non-finite values."""


class IterationLimitError(GBMDSError, RuntimeError):
    """The annealing schedule failed to reach 1 within the iteration cap."""


class GBMDSWarning(UserWarning):
    """Base class for warnings issued by this package."""


class NonEuclideanWarning(GBMDSWarning):
    """Negative eigenvalues were clamped while embedding a non-Euclidean matrix."""


class RankDeficiencyWarning(GBMDSWarning):
    """Requested dimension exceeds the positive-eigenvalue rank; trailing axes are zero."""


class DegenerateInputWarning(GBMDSWarning):
    """Input required regularization or perturbation before use."""
