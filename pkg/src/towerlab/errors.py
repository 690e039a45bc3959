"""Exception types shared across the package."""


class TowerlabError(Exception):
    """Base class for all package-specific errors."""


class UnsupportedDimensionError(TowerlabError):
    """Raised for ambient dimensions below 4, where the construction breaks down."""


class DomainError(TowerlabError):
    """A point lies outside the model domain (or on its boundary where forbidden)."""


class DegenerateCenterError(DomainError):
    """Bubble center sits on the boundary: projection expansions degenerate."""


class AdmissibleSetError(TowerlabError):
    """Reduced coordinates left the admissible set (t > 0, all d_i > 0)."""


class QuadratureBudgetError(TowerlabError):
    """Adaptive integration did not reach tolerance within its budget.

    Carries the partial result so callers can inspect it.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class NoConvergenceError(TowerlabError):
    """An iterative solve failed; `trace` holds per-iteration diagnostics."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class IllConditionedKernelError(TowerlabError):
    """Kernel Gram matrix too ill-conditioned to project against."""


class StructureLostError(TowerlabError):
    """A solution no longer exhibits the expected tower structure."""


class SolverError(TowerlabError):
    """Linear solver breakdown."""


class ConfigError(TowerlabError):
    """Invalid run configuration; message carries the offending line when known."""
