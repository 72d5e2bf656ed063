"""Exception types shared across the package."""


class FptxError(Exception):
    """Base class for all package-specific errors."""


class DomainError(FptxError, ValueError):
    """An operation was called outside its mathematical domain
    (division by zero, sqrt of a negative, softmax overflow, ...)."""


class DegenerateInputError(DomainError):
    """A normalization layer received an input it cannot normalize
    (zero vector for RMS normalization, constant vector for layer
    normalization)."""


class PrecisionError(FptxError, ValueError):
    """A precondition of the arithmetic model is violated, e.g. n*u >= 1
    when forming gamma_n, or a reference precision that is not finer
    than the simulated one."""


class UnsupportedNormError(FptxError, ValueError):
    """The requested induced-norm pair (p, q) has no implemented closed
    form; only the pairs actually used by the analysis are supported."""


class SingularityError(FptxError, ValueError):
    """A matrix required to be nonsingular is singular to working
    tolerance (e.g. the key-query product when forming spectral ratios)."""


class KinkCrossingError(FptxError, ValueError):
    """A finite-difference stencil straddles a ReLU kink or a
    normalization singularity; retry with a smaller step."""


class NonGenericError(DomainError):
    """A lemma hypothesis requires a generic quantity (no zero entries,
    or entries bounded away from zero) and the input violates it."""


class EmptyStatsError(FptxError, ValueError):
    """Summary statistics were requested for a sample that contains no
    finite values."""
