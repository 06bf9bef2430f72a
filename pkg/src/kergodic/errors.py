"""Exception types raised across the package."""


class KergodicError(Exception):
    """Base class for all package errors."""


class StructureError(KergodicError, ValueError):
    """A matrix does not have the structure required by the operation."""


class BranchError(KergodicError, ValueError):
    """A rotation is too close to angle pi for log / dexp to be well defined.

    ``index`` identifies the offending element (or pair) when raised from a
    batched evaluation.
    """

    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


class KindMismatch(KergodicError, ValueError):
    """Group elements of different kinds (SO3 vs SE3) were combined."""


class DimMismatch(KergodicError, ValueError):
    """Array dimensions do not agree."""


class DegenerateCluster(KergodicError, RuntimeError):
    """An EM component lost (almost) all of its responsibility mass."""


class EmptyGrid(KergodicError, ValueError):
    """No kernel candidates were supplied."""


class QuadratureOverflow(KergodicError, ValueError):
    """Tensor quadrature would exceed the supported dimension budget."""


class BasisMismatch(KergodicError, ValueError):
    """Coefficient sets were computed on different Fourier bases."""


class ModelMismatch(KergodicError, ValueError):
    """A trajectory does not belong to the given system model."""


class NonFiniteControl(KergodicError, ValueError):
    """A control sequence contains NaN or inf."""


class RiccatiBlowup(KergodicError, ArithmeticError):
    """The backward recursion lost positive semidefiniteness."""


class LineSearchFailure(KergodicError, RuntimeError):
    """Armijo backtracking did not find an acceptable step."""


class ConfigError(KergodicError, ValueError):
    """A configuration or input file is malformed."""
