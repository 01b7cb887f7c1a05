"""Exception hierarchy shared by the pipeline stages."""


class LatentDagError(Exception):
    """Base class for all errors raised by this package."""


class AssumptionViolation(LatentDagError):
    """The input violates a modelling assumption (no-twins, SSC, ...)."""


class InconsistentInput(AssumptionViolation):
    """Stage inputs do not fit together (wrong group sizes, non-injective L, ...)."""


class IncompleteTableError(LatentDagError):
    """A subset weight table lacks an entry that an operation needs."""


class NumericalFailure(LatentDagError):
    """A numerical routine could not produce a trustworthy answer."""


class JennrichFailure(NumericalFailure):
    """Simultaneous diagonalization failed; callers fall back to ALS."""


class UnrecoverableTensor(NumericalFailure):
    """No rank candidate fit the tensor within tolerance."""


class GenerationError(LatentDagError):
    """Random model generation exhausted its rejection budget."""
