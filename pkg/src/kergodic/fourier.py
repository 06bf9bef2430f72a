"""Fourier (spectral) ergodic metric, used for evaluation only."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .distributions import GaussianMixture, gmm_pdf
from .errors import BasisMismatch, DimMismatch, QuadratureOverflow

logger = logging.getLogger(__name__)

DEFAULT_K = 10
QUADRATURE_NODES = 64
MAX_QUADRATURE_DIM = 3


@dataclass(frozen=True)
class FourierBasis:
    """Cosine basis on the box ``lower + [0, L_1] x ... x [0, L_n]``.

    ``counts[i]`` is the number of frequencies in dimension ``i``; indices run
    over ``0 .. counts[i] - 1``.
    """

    counts: tuple[int, ...]
    lengths: tuple[float, ...]
    lower: tuple[float, ...] | None = None

    def __post_init__(self):
        counts = tuple(int(k) for k in self.counts)
        lengths = tuple(float(v) for v in self.lengths)
        lower = (0.0,) * len(counts) if self.lower is None else tuple(float(v) for v in self.lower)
        if not (len(counts) == len(lengths) == len(lower)):
            raise DimMismatch("counts, lengths and lower must have equal length")
        if any(k < 1 for k in counts) or any(v <= 0 for v in lengths):
            raise ValueError("counts must be >= 1 and lengths > 0")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "lower", lower)

    @classmethod
    def uniform(cls, dim: int, K: int = DEFAULT_K, lower=None, upper=None) -> "FourierBasis":
        lower = np.zeros(dim) if lower is None else np.asarray(lower, float)
        upper = np.ones(dim) if upper is None else np.asarray(upper, float)
        return cls((K,) * dim, tuple(upper - lower), tuple(lower))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @cached_property
    def indices(self) -> NDArray:
        """Multi-indices in C order, shape ``(size, n)``."""
        return np.array(list(np.ndindex(*self.counts)), dtype=int).reshape(-1, self.dim)

    @cached_property
    def normalizers(self) -> NDArray:
        L = np.array(self.lengths)
        return np.prod(np.where(self.indices == 0, np.sqrt(L), np.sqrt(L / 2)), axis=1)

    @cached_property
    def weights(self) -> NDArray:
        """Sobolev-type weights ``(1 + |k|)^(-(n+1)/2)``."""
        return (1.0 + np.linalg.norm(self.indices, axis=1)) ** (-(self.dim + 1) / 2)

    def _axis_factors(self, x: NDArray) -> list[NDArray]:
        """Per-dimension normalised cosines, each ``(..., K_i)``."""
        out = []
        for i, (K, L, lo) in enumerate(zip(self.counts, self.lengths, self.lower)):
            k = np.arange(K)
            h = np.where(k == 0, np.sqrt(L), np.sqrt(L / 2))
            out.append(np.cos(np.pi * k * (x[..., i, None] - lo) / L) / h)
        return out

    def evaluate(self, x: ArrayLike) -> NDArray:
        """All basis functions at ``x``, shape ``(..., size)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DimMismatch(f"point dimension {x.shape[-1]} != basis dimension {self.dim}")
        factors = self._axis_factors(x)
        out = factors[0]
        for f in factors[1:]:
            out = (out[..., :, None] * f[..., None, :]).reshape(out.shape[:-1] + (-1,))
        return out


def basis_eval(basis: FourierBasis, k: Sequence[int], x: ArrayLike) -> NDArray:
    """Single basis function ``f_k(x)``."""
    x = np.asarray(x, dtype=float)
    k = np.asarray(k, dtype=int)
    if k.shape != (basis.dim,) or x.shape[-1] != basis.dim:
        raise DimMismatch("multi-index / point dimension does not match the basis")
    L = np.array(basis.lengths)
    lo = np.array(basis.lower)
    if np.any(x < lo) or np.any(x > lo + L):
        warnings.warn("point outside the basis domain", stacklevel=2)
    h = np.prod(np.where(k == 0, np.sqrt(L), np.sqrt(L / 2)))
    return np.prod(np.cos(np.pi * k * (x - lo) / L), axis=-1) / h


@dataclass(frozen=True, eq=False)
class SpectralCoefficients:
    basis: FourierBasis
    values: NDArray
    kind: str

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"k{i + 1}" for i in range(self.basis.dim)] + ["value"])
            for idx, v in zip(self.basis.indices, self.values):
                w.writerow([int(i) for i in idx] + [repr(float(v))])


def gauss_legendre_grid(basis: FourierBasis, nodes: int = QUADRATURE_NODES):
    """Per-axis Gauss-Legendre nodes and weights mapped onto the domain."""
    t, w = np.polynomial.legendre.leggauss(nodes)
    axes, wts = [], []
    for L, lo in zip(basis.lengths, basis.lower):
        axes.append(lo + 0.5 * L * (t + 1.0))
        wts.append(0.5 * L * w)
    return axes, wts


def distribution_coeffs(
    basis: FourierBasis,
    p: GaussianMixture,
    nodes: int = QUADRATURE_NODES,
    normalize: bool = True,
) -> SpectralCoefficients:
    """Spectral coefficients of ``p`` by tensor Gauss-Legendre quadrature.

    With ``normalize`` the density is restricted to the domain and rescaled to
    unit mass there, which is how the trajectory's empirical distribution is
    normalised as well.
    """
    if basis.dim != p.dim:
        raise DimMismatch("basis and mixture dimensions differ")
    if basis.dim > MAX_QUADRATURE_DIM:
        raise QuadratureOverflow(
            f"tensor quadrature limited to {MAX_QUADRATURE_DIM} dimensions, got {basis.dim}"
        )
    axes, wts = gauss_legendre_grid(basis, nodes)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    weighted = gmm_pdf(p, mesh)
    for i, w in enumerate(wts):
        shape = [1] * basis.dim
        shape[i] = -1
        weighted = weighted * w.reshape(shape)
    mass = float(weighted.sum())
    if 1.0 - mass > 1e-3:
        warnings.warn(f"{1.0 - mass:.3g} of the target mass lies outside the domain", stacklevel=2)
    if normalize:
        weighted = weighted / mass
    # contract one axis at a time against the per-axis cosine tables
    coeffs = weighted
    for i, x in enumerate(axes):
        pts = np.zeros((len(x), basis.dim))
        pts[:, i] = x
        table = basis._axis_factors(pts)[i]  # (nodes, K_i)
        coeffs = np.tensordot(coeffs, table, axes=([0], [0]))
    return SpectralCoefficients(basis, coeffs.reshape(-1), "distribution")


def trajectory_coeffs(basis: FourierBasis, traj) -> SpectralCoefficients:
    """Time-averaged basis values along a trajectory (or point set)."""
    from .metric import EuclideanTrajectory

    if isinstance(traj, EuclideanTrajectory):
        x = traj.positions(basis.dim)
    else:
        x = np.asarray(traj, dtype=float)
    return SpectralCoefficients(basis, basis.evaluate(x).mean(axis=0), "trajectory")


def fourier_metric_from_coeffs(c: SpectralCoefficients, pk: SpectralCoefficients) -> float:
    if c.basis != pk.basis:
        raise BasisMismatch("coefficients were computed on different bases")
    diff = c.values - pk.values
    return float(np.sum(c.basis.weights * diff * diff))


def fourier_metric(basis: FourierBasis, traj, p: GaussianMixture | SpectralCoefficients) -> float:
    """Weighted squared distance between trajectory and target coefficients."""
    pk = p if isinstance(p, SpectralCoefficients) else distribution_coeffs(basis, p)
    return fourier_metric_from_coeffs(trajectory_coeffs(basis, traj), pk)
