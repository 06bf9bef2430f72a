"""Kernel ergodic search on Euclidean boxes and on SO(3) / SE(3)."""

from .distributions import (
    GaussianMixture,
    LieGaussianMixture,
    gmm_pdf,
    gmm_sample,
    lie_gmm_fit_em,
    lie_gmm_pdf,
    lie_gmm_sample,
    random_benchmark_gmm,
)
from .dynamics import FirstOrder, LieKinematic, SecondOrder, linearize, rollout
from .errors import KergodicError
from .fourier import FourierBasis, distribution_coeffs, fourier_metric
from .metric import (
    EuclideanTrajectory,
    LieTrajectory,
    ergodic_grad,
    ergodic_metric,
    lie_ergodic_grad,
    lie_ergodic_metric,
    tune_kernel,
)
from .planner import ErgodicProblem, OptimizationReport, SearchSpace, bootstrap, optimize

__version__ = "0.1.0"

__all__ = [
    "EuclideanTrajectory",
    "ErgodicProblem",
    "FirstOrder",
    "FourierBasis",
    "GaussianMixture",
    "KergodicError",
    "LieGaussianMixture",
    "LieKinematic",
    "LieTrajectory",
    "OptimizationReport",
    "SearchSpace",
    "SecondOrder",
    "bootstrap",
    "distribution_coeffs",
    "ergodic_grad",
    "ergodic_metric",
    "fourier_metric",
    "gmm_pdf",
    "gmm_sample",
    "lie_ergodic_grad",
    "lie_ergodic_metric",
    "lie_gmm_fit_em",
    "lie_gmm_pdf",
    "lie_gmm_sample",
    "linearize",
    "optimize",
    "random_benchmark_gmm",
    "rollout",
    "tune_kernel",
]
