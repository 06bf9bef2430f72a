"""Target distributions: Euclidean and Lie-group Gaussian mixtures."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp, ndtri
from scipy.stats import qmc

from . import liegroups as lg
from .errors import DegenerateCluster, DimMismatch, StructureError

logger = logging.getLogger(__name__)

COV_FLOOR = 1e-8
BENCH_COV_RANGE = (0.01, 0.02)


def _floor_covariances(covs: NDArray) -> NDArray:
    covs = np.array(covs, dtype=float)
    scale = max(1.0, float(np.abs(covs).max(initial=0.0)))
    if np.any(np.abs(covs - np.swapaxes(covs, -1, -2)) > 1e-12 * scale):
        raise StructureError("covariance matrices must be symmetric")
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    vals, vecs = np.linalg.eigh(covs)
    if np.any(vals < -1e-9 * scale):
        raise StructureError("covariance matrices must be positive semidefinite")
    if np.any(vals < COV_FLOOR):
        vals = np.maximum(vals, COV_FLOOR)
        covs = np.einsum("...ij,...j,...kj->...ik", vecs, vals, vecs)
    return covs


def _normalise_weights(weights: ArrayLike) -> NDArray:
    w = np.array(weights, dtype=float).reshape(-1)
    if w.size == 0 or np.any(w <= 0) or not np.all(np.isfinite(w)):
        raise StructureError("mixture weights must be positive and finite")
    total = w.sum()
    if abs(total - 1.0) > 1e-6:
        raise StructureError(f"mixture weights sum to {total}, expected 1")
    # leave rounding-level sums alone so serialised mixtures reload bit-exactly
    return w if abs(total - 1.0) < 1e-12 else w / total


def _readonly(a: NDArray) -> NDArray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianComponent:
    mean: NDArray
    cov: NDArray
    weight: float


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Full-covariance Gaussian mixture in R^n.

    Arrays are stacked per component: ``weights (k,)``, ``means (k, n)``,
    ``covs (k, n, n)``.  Covariance eigenvalues are floored at ``COV_FLOOR``.
    """

    weights: NDArray
    means: NDArray
    covs: NDArray

    def __post_init__(self):
        means = np.array(self.means, dtype=float)
        if means.ndim == 1:
            means = means[None, :]
        covs = np.array(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        weights = _normalise_weights(self.weights)
        k, n = means.shape
        if covs.shape != (k, n, n) or weights.shape != (k,):
            raise DimMismatch(
                f"inconsistent mixture shapes: weights {weights.shape}, "
                f"means {means.shape}, covs {covs.shape}"
            )
        object.__setattr__(self, "weights", _readonly(weights))
        object.__setattr__(self, "means", _readonly(means))
        object.__setattr__(self, "covs", _readonly(_floor_covariances(covs)))

    @classmethod
    def from_components(cls, components: Sequence[GaussianComponent]) -> "GaussianMixture":
        return cls(
            [c.weight for c in components],
            np.stack([np.asarray(c.mean, float) for c in components]),
            np.stack([np.asarray(c.cov, float) for c in components]),
        )

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def components(self) -> list[GaussianComponent]:
        return [GaussianComponent(m, c, float(w)) for w, m, c in zip(self.weights, self.means, self.covs)]

    @cached_property
    def precisions(self) -> NDArray:
        return np.linalg.inv(self.covs)

    @cached_property
    def cholesky(self) -> NDArray:
        return np.linalg.cholesky(self.covs)

    @cached_property
    def log_norms(self) -> NDArray:
        _, logdet = np.linalg.slogdet(self.covs)
        return -0.5 * (self.dim * np.log(2 * np.pi) + logdet)

    def mean(self) -> NDArray:
        return self.weights @ self.means

    def _check(self, x: NDArray) -> None:
        if x.shape[-1] != self.dim:
            raise DimMismatch(f"point dimension {x.shape[-1]} != mixture dimension {self.dim}")

    def component_densities(self, x: ArrayLike) -> tuple[NDArray, NDArray]:
        """Weighted component densities ``(..., k)`` and offsets ``mu - x``."""
        x = np.asarray(x, dtype=float)
        self._check(x)
        diff = self.means - x[..., None, :]
        maha = np.einsum("...ki,kij,...kj->...k", diff, self.precisions, diff)
        dens = self.weights * np.exp(self.log_norms - 0.5 * maha)
        return dens, diff


def gmm_pdf(p: GaussianMixture, x: ArrayLike) -> NDArray:
    """Mixture density at ``x`` (shape ``(n,)`` or ``(..., n)``)."""
    dens, _ = p.component_densities(x)
    return dens.sum(axis=-1)


def gmm_grad(p: GaussianMixture, x: ArrayLike) -> NDArray:
    """Gradient of :func:`gmm_pdf` with respect to ``x``."""
    dens, diff = p.component_densities(x)
    return np.einsum("...k,kij,...kj->...i", dens, p.precisions, diff)


def gmm_sample(p: GaussianMixture, rng: np.random.Generator, count: int) -> NDArray:
    """Draw ``count`` samples, shape ``(count, n)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    labels = rng.choice(p.n_components, size=count, p=p.weights)
    z = rng.standard_normal((count, p.dim))
    return p.means[labels] + np.einsum("nij,nj->ni", p.cholesky[labels], z)


def gmm_sq_integral(p: GaussianMixture) -> float:
    """Closed-form integral of the squared density over R^n."""
    diff = p.means[:, None, :] - p.means[None, :, :]
    S = p.covs[:, None] + p.covs[None, :]
    _, logdet = np.linalg.slogdet(S)
    maha = np.einsum("abi,abi->ab", diff, np.linalg.solve(S, diff[..., None])[..., 0])
    cross = np.exp(-0.5 * (p.dim * np.log(2 * np.pi) + logdet + maha))
    return float(p.weights @ cross @ p.weights)


def gmm_box_mass(p: GaussianMixture, lower: ArrayLike, upper: ArrayLike, log2_points: int = 16) -> float:
    """Probability mass of ``p`` inside the box ``[lower, upper]``.

    Quasi-Monte Carlo with a fixed scrambled Sobol sequence, so the value is
    a pure function of its inputs (accuracy about 1e-4).
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    u = qmc.Sobol(p.dim, scramble=True, seed=0).random_base2(log2_points)
    z = ndtri(np.clip(u, 1e-16, 1 - 1e-16))
    total = 0.0
    for w, mu, L in zip(p.weights, p.means, p.cholesky):
        x = mu + z @ L.T
        total += w * float(np.mean(np.all((x >= lower) & (x <= upper), axis=1)))
    return total


def random_benchmark_gmm(dim: int, rng: np.random.Generator, n_components: int = 3) -> GaussianMixture:
    """Randomised benchmark target on the unit cube.

    Means are uniform in [0, 1]^dim.  Covariances are ``Q diag(l) Q^T`` with a
    random orthogonal ``Q`` and eigenvalues ``l`` uniform in [0.01, 0.02], so
    every diagonal entry lies in the same range.  Weights are Dirichlet(1).
    """
    if not 2 <= dim <= 6:
        raise ValueError(f"benchmark dimension must be in [2, 6], got {dim}")
    means = rng.uniform(0.0, 1.0, size=(n_components, dim))
    covs = np.empty((n_components, dim, dim))
    lo, hi = BENCH_COV_RANGE
    for i in range(n_components):
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        q = q * np.sign(np.diag(r))
        eig = rng.uniform(lo, hi, size=dim)
        covs[i] = (q * eig) @ q.T
    covs = 0.5 * (covs + np.swapaxes(covs, 1, 2))
    weights = rng.dirichlet(np.ones(n_components))
    return GaussianMixture(weights, means, covs)


# ---------------------------------------------------------------------------
# Lie group mixtures


@dataclass(frozen=True)
class LieGaussianComponent:
    mean: NDArray
    cov: NDArray
    weight: float = 1.0


@dataclass(frozen=True, eq=False)
class LieGaussianMixture:
    """Mixture of concentrated Gaussians on SO(3) or SE(3).

    ``means`` are group matrices ``(k, m, m)``; ``covs`` live in the tangent
    space of each mean, ``(k, d, d)``.
    """

    weights: NDArray
    means: NDArray
    covs: NDArray

    def __post_init__(self):
        means = np.array(self.means, dtype=float)
        if means.ndim == 2:
            means = means[None]
        covs = np.array(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        weights = _normalise_weights(self.weights)
        kind = lg.kind_of_matrix(means)
        lg.check_group(means)
        d = lg.tangent_dim(kind)
        k = means.shape[0]
        if covs.shape != (k, d, d) or weights.shape != (k,):
            raise DimMismatch(
                f"inconsistent Lie mixture shapes: weights {weights.shape}, "
                f"means {means.shape}, covs {covs.shape}"
            )
        covs = _floor_covariances(covs)
        rot_var = np.linalg.eigvalsh(covs[:, :3, :3]).max()
        if 3.0 * np.sqrt(rot_var) >= np.pi / 2:
            warnings.warn(
                "rotation covariance is not concentrated (3 sigma >= pi/2); "
                "densities far from the means are unreliable",
                stacklevel=2,
            )
        object.__setattr__(self, "weights", _readonly(weights))
        object.__setattr__(self, "means", _readonly(means))
        object.__setattr__(self, "covs", _readonly(covs))

    @classmethod
    def from_components(cls, components: Sequence[LieGaussianComponent]) -> "LieGaussianMixture":
        return cls(
            [c.weight for c in components],
            np.stack([np.asarray(c.mean, float) for c in components]),
            np.stack([np.asarray(c.cov, float) for c in components]),
        )

    @property
    def kind(self) -> lg.Kind:
        return lg.kind_of_matrix(self.means)

    @property
    def dim(self) -> int:
        return self.covs.shape[-1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def components(self) -> list[LieGaussianComponent]:
        return [LieGaussianComponent(m, c, float(w)) for w, m, c in zip(self.weights, self.means, self.covs)]

    @cached_property
    def precisions(self) -> NDArray:
        return np.linalg.inv(self.covs)

    @cached_property
    def cholesky(self) -> NDArray:
        return np.linalg.cholesky(self.covs)

    @cached_property
    def log_norms(self) -> NDArray:
        _, logdet = np.linalg.slogdet(self.covs)
        return -0.5 * (self.dim * np.log(2 * np.pi) + logdet)

    @cached_property
    def mean_inverses(self) -> NDArray:
        return lg.inverse(self.means)

    def tangent_offsets(self, g: ArrayLike) -> NDArray:
        """``log(mean_k^-1 g)`` for every component, shape ``(..., k, d)``."""
        g = np.asarray(g, dtype=float)
        if g.shape[-2:] != self.means.shape[-2:]:
            raise DimMismatch(f"group matrix shape {g.shape[-2:]} does not match mixture")
        return lg.log_map(self.mean_inverses @ g[..., None, :, :])

    def translate_means(self, offset: ArrayLike) -> "LieGaussianMixture":
        """Shift every SE(3) mean by a world-frame translation."""
        if self.kind != "SE3":
            raise StructureError("only SE3 means carry a translation")
        means = self.means.copy()
        means[:, :3, 3] += np.asarray(offset, dtype=float)
        return LieGaussianMixture(self.weights, means, self.covs)


def _lie_weighted_densities(p: LieGaussianMixture, g: ArrayLike) -> tuple[NDArray, NDArray]:
    xi = p.tangent_offsets(g)
    maha = np.einsum("...ki,kij,...kj->...k", xi, p.precisions, xi)
    dens = p.weights * np.exp(p.log_norms - 0.5 * maha)
    return dens, xi


def lie_gmm_pdf(p: LieGaussianMixture, g: ArrayLike) -> NDArray:
    dens, _ = _lie_weighted_densities(p, g)
    return dens.sum(axis=-1)


def lie_gmm_grad(p: LieGaussianMixture, g: ArrayLike) -> NDArray:
    """Left-trivialised gradient of :func:`lie_gmm_pdf`, shape ``(..., d)``."""
    dens, xi = _lie_weighted_densities(p, g)
    # derivative of log(mean^-1 g exp(z)) in z is dexp_inv(-xi)
    Jinv = lg.dexp_inv(-xi)
    sx = np.einsum("kij,...kj->...ki", p.precisions, xi)
    return -np.einsum("...k,...kji,...kj->...i", dens, Jinv, sx)


def _single(c: LieGaussianComponent) -> LieGaussianMixture:
    return LieGaussianMixture([1.0], np.asarray(c.mean)[None], np.asarray(c.cov)[None])


def lie_gaussian_pdf(c: LieGaussianComponent, g: ArrayLike) -> NDArray:
    """Density of one concentrated Gaussian (its weight is ignored)."""
    return lie_gmm_pdf(_single(c), g)


def lie_gaussian_grad(c: LieGaussianComponent, g: ArrayLike) -> NDArray:
    return lie_gmm_grad(_single(c), g)


def lie_gmm_sample(p: LieGaussianMixture, rng: np.random.Generator, count: int) -> NDArray:
    """Right-perturbation samples ``mean @ exp(eps)``, shape ``(count, m, m)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    labels = rng.choice(p.n_components, size=count, p=p.weights)
    z = rng.standard_normal((count, p.dim))
    eps = np.einsum("nij,nj->ni", p.cholesky[labels], z)
    return p.means[labels] @ lg.exp_map(eps)


def karcher_mean(
    samples: NDArray,
    weights: NDArray | None = None,
    init: NDArray | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> NDArray:
    """Weighted intrinsic mean by fixed-point iteration in the tangent space."""
    samples = np.asarray(samples, dtype=float)
    w = np.ones(len(samples)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    mean = samples[0].copy() if init is None else np.array(init, dtype=float)
    for _ in range(max_iter):
        step = w @ lg.log_map(lg.inverse(mean) @ samples)
        mean = mean @ lg.exp_map(step)
        if np.linalg.norm(step) < tol:
            break
    return mean


# ---------------------------------------------------------------------------
# EM on Lie groups


@dataclass
class EMResult:
    mixture: LieGaussianMixture
    log_likelihood: list[float] = field(default_factory=list)
    restarts: int = 0
    converged: bool = False


def _log_resp(weights, means, covs, samples):
    mix = LieGaussianMixture(weights, means, covs)
    xi = mix.tangent_offsets(samples)
    maha = np.einsum("nki,kij,nkj->nk", xi, mix.precisions, xi)
    logp = np.log(mix.weights) + mix.log_norms - 0.5 * maha
    ll = logsumexp(logp, axis=1)
    return logp - ll[:, None], float(ll.sum())


def _weighted_mean_step(mean, samples, r, precision, tol=1e-8, max_iter=50):
    """Move ``mean`` to decrease sum_i r_i |log(mean^-1 g_i)|^2_precision.

    Gauss-Newton on the right-perturbation ``mean @ exp(delta)``; steps that
    do not decrease the objective are halved, so the update is monotone.
    """

    def objective(m):
        xi = lg.log_map(lg.inverse(m) @ samples)
        return float(r @ np.einsum("ni,ij,nj->n", xi, precision, xi)), xi

    f, xi = objective(mean)
    for _ in range(max_iter):
        # log(exp(-delta) exp(xi)) ~= xi - dexp_inv(xi) delta
        J = lg.dexp_inv(xi)
        H = np.einsum("n,nji,jk,nkl->il", r, J, precision, J)
        gvec = np.einsum("n,nji,jk,nk->i", r, J, precision, xi)
        delta = np.linalg.solve(H, gvec)
        step = 1.0
        while step > 1e-6:
            cand = mean @ lg.exp_map(step * delta)
            f_new, xi_new = objective(cand)
            if f_new <= f:
                break
            step *= 0.5
        else:
            break
        mean, f, xi = cand, f_new, xi_new
        if np.linalg.norm(step * delta) < tol:
            break
    return mean, xi


def lie_gmm_fit_em(
    samples: ArrayLike,
    k: int,
    rng: np.random.Generator,
    max_iter: int = 200,
    tol: float = 1e-9,
    max_restarts: int = 5,
) -> EMResult:
    """Fit a ``k``-component concentrated Gaussian mixture by tangent-space EM.

    Initialisation runs k-means++ on tangent coordinates at the intrinsic mean
    of all samples.  The M-step moves each mean by a precision-weighted
    intrinsic update (which reduces to the weighted Karcher step for
    isotropic covariance) and then sets the covariance to the weighted outer
    product of the logs at the new mean, so the log-likelihood never
    decreases.
    """
    samples = np.asarray(samples, dtype=float)
    lg.check_group(samples, tol=1e-6)
    N = len(samples)
    if k < 1:
        raise ValueError("k must be >= 1")
    if N < 10 * k:
        raise ValueError(f"need at least {10 * k} samples for {k} components, got {N}")
    d = lg.tangent_dim(lg.kind_of_matrix(samples))

    center = karcher_mean(samples)
    tangent = lg.log_map(lg.inverse(center) @ samples)

    for attempt in range(max_restarts + 1):
        seed = int(rng.integers(2**31 - 1))
        try:
            return _em_once(samples, tangent, center, k, d, seed, max_iter, tol, attempt)
        except DegenerateCluster:
            logger.info("EM restart %d after degenerate cluster", attempt + 1)
    raise DegenerateCluster(f"EM failed after {max_restarts} restarts")


def _em_once(samples, tangent, center, k, d, seed, max_iter, tol, attempt) -> EMResult:
    N = len(samples)
    if k == 1:
        labels = np.zeros(N, dtype=int)
    else:
        _, labels = kmeans2(tangent, k, minit="++", seed=seed)
    resp = np.zeros((N, k))
    resp[np.arange(N), labels] = 1.0
    means = np.empty((k,) + samples.shape[1:])
    covs = np.empty((k, d, d))
    nk = resp.sum(axis=0)
    if np.any(nk < 1e-6):
        raise DegenerateCluster("empty initial cluster")
    for j in range(k):
        means[j] = center @ lg.exp_map(resp[:, j] @ tangent[:, :] / nk[j])
        means[j] = karcher_mean(samples, resp[:, j], init=means[j])
        xi = lg.log_map(lg.inverse(means[j]) @ samples)
        covs[j] = np.einsum("n,ni,nj->ij", resp[:, j], xi, xi) / nk[j]
    weights = nk / N
    covs = _floor_covariances(covs)

    history: list[float] = []
    converged = False
    for _ in range(max_iter):
        log_r, ll = _log_resp(weights, means, covs, samples)
        history.append(ll)
        if len(history) > 1 and history[-1] - history[-2] < tol * max(1.0, abs(history[-1])):
            converged = True
            break
        resp = np.exp(log_r)
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-6):
            raise DegenerateCluster("component lost its responsibility mass")
        weights = nk / N
        precisions = np.linalg.inv(covs)
        for j in range(k):
            means[j], xi = _weighted_mean_step(means[j], samples, resp[:, j], precisions[j])
            covs[j] = np.einsum("n,ni,nj->ij", resp[:, j], xi, xi) / nk[j]
        covs = _floor_covariances(covs)
    else:
        _, ll = _log_resp(weights, means, covs, samples)
        history.append(ll)
    mixture = LieGaussianMixture(weights, means, covs)
    return EMResult(mixture, history, restarts=attempt, converged=converged)
