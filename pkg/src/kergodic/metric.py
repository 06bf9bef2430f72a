"""Kernel ergodic metric on R^n and on SO(3)/SE(3).

The time integrals are replaced by averages over trajectory samples, so every
quantity here depends on the visited states only (``dt`` cancels).  Row-block
sums are always reduced in the same block order, which makes results
bit-identical whatever the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import liegroups as lg
from .distributions import (
    GaussianMixture,
    LieGaussianMixture,
    gmm_grad,
    gmm_pdf,
    gmm_sq_integral,
    lie_gmm_grad,
    lie_gmm_pdf,
)
from .errors import BranchError, DimMismatch, EmptyGrid, StructureError

BLOCK_ROWS = 128


@dataclass(frozen=True, eq=False)
class EuclideanTrajectory:
    """States ``(T, state_dim)`` and controls ``(T, m)`` on a uniform grid.

    ``states[0]`` is the initial state and ``states[k + 1]`` results from
    applying ``controls[k]``; the last control row only enters running costs.
    """

    states: NDArray
    controls: NDArray
    dt: float

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        u = np.asarray(self.controls, dtype=float)
        if s.ndim != 2 or u.ndim != 2 or len(s) != len(u):
            raise DimMismatch(f"states {s.shape} and controls {u.shape} must be 2D with equal rows")
        if len(s) < 2:
            raise StructureError("a trajectory needs at least two steps")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(u))):
            raise StructureError("trajectory contains non-finite entries")
        if not self.dt > 0:
            raise StructureError("dt must be positive")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "controls", u)

    @property
    def horizon(self) -> int:
        return len(self.states)

    def positions(self, n: int) -> NDArray:
        return self.states[:, :n]


@dataclass(frozen=True, eq=False)
class LieTrajectory:
    """Group states ``(T, m, m)`` with left-trivialised controls ``(T, c)``."""

    states: NDArray
    controls: NDArray
    dt: float

    def __post_init__(self):
        g = np.asarray(self.states, dtype=float)
        u = np.asarray(self.controls, dtype=float)
        lg.kind_of_matrix(g)
        if g.ndim != 3 or u.ndim != 2 or len(g) != len(u):
            raise DimMismatch(f"states {g.shape} and controls {u.shape} are inconsistent")
        if len(g) < 2:
            raise StructureError("a trajectory needs at least two steps")
        if not self.dt > 0:
            raise StructureError("dt must be positive")
        object.__setattr__(self, "states", g)
        object.__setattr__(self, "controls", u)

    @property
    def kind(self) -> lg.Kind:
        return lg.kind_of_matrix(self.states)

    @property
    def horizon(self) -> int:
        return len(self.states)


def _as_points(traj, n: int) -> NDArray:
    if isinstance(traj, EuclideanTrajectory):
        return traj.positions(n)
    x = np.asarray(traj, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.shape[-1] != n:
        raise DimMismatch(f"state dimension {x.shape[-1]} != target dimension {n}")
    return x


def _as_group_states(traj) -> NDArray:
    if isinstance(traj, LieTrajectory):
        return traj.states
    g = np.asarray(traj, dtype=float)
    return g[None] if g.ndim == 2 else g


def _theta_vector(theta: ArrayLike, n: int) -> NDArray:
    th = np.asarray(theta, dtype=float)
    if th.ndim == 0:
        th = np.full(n, float(th))
    if th.shape != (n,):
        raise DimMismatch(f"kernel parameter has shape {th.shape}, expected ({n},)")
    if np.any(th <= 0) or not np.all(np.isfinite(th)):
        raise ValueError("kernel parameters must be positive")
    return th


def _blocked(n_rows: int, fn: Callable[[slice], NDArray], workers: int = 1) -> list[NDArray]:
    blocks = [slice(i, min(i + BLOCK_ROWS, n_rows)) for i in range(0, n_rows, BLOCK_ROWS)]
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, blocks))
    return [fn(b) for b in blocks]


def _fixed_sum(parts: Sequence[float]) -> float:
    total = 0.0
    for v in parts:
        total += float(v)
    return total


# ---------------------------------------------------------------------------
# Euclidean kernel


def kernel_eval(x1: ArrayLike, x2: ArrayLike, theta: ArrayLike) -> NDArray:
    """Gaussian kernel ``N(x1 | x2, diag(theta))``; theta holds variances."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape[-1] != x2.shape[-1]:
        raise DimMismatch("kernel arguments have different dimensions")
    th = _theta_vector(theta, x1.shape[-1])
    d = x1 - x2
    log_norm = -0.5 * (len(th) * np.log(2 * np.pi) + np.log(th).sum())
    return np.exp(log_norm - 0.5 * np.sum(d * d / th, axis=-1))


def kernel_grad1(x1: ArrayLike, x2: ArrayLike, theta: ArrayLike) -> NDArray:
    """Derivative of :func:`kernel_eval` with respect to ``x1``."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    th = _theta_vector(theta, x1.shape[-1])
    return -kernel_eval(x1, x2, th)[..., None] * (x1 - x2) / th


def _self_similarity(x: NDArray, th: NDArray, workers: int) -> float:
    def block(rows: slice) -> float:
        return float(kernel_eval(x[rows, None, :], x[None, :, :], th).sum())

    return _fixed_sum(_blocked(len(x), block, workers))


def _kernel_grad_rows(x: NDArray, th: NDArray, workers: int) -> NDArray:
    """``sum_j grad_1 phi(x_i, x_j)`` for every row ``i``."""

    def block(rows: slice) -> NDArray:
        return kernel_grad1(x[rows, None, :], x[None, :, :], th).sum(axis=1)

    return np.concatenate(_blocked(len(x), block, workers), axis=0)


def _kernel_grad_rows_pairs(x: NDArray, th: NDArray) -> NDArray:
    """Same as :func:`_kernel_grad_rows` via i < j pairs scattered to both rows."""
    i, j = np.triu_indices(len(x), k=1)
    g = kernel_grad1(x[i], x[j], th)
    out = np.zeros_like(x)
    np.add.at(out, i, g)
    np.add.at(out, j, -g)
    return out


def ergodic_metric(
    traj, p: GaussianMixture, theta: ArrayLike, workers: int = 1, scale: float = 1.0
) -> float:
    """Kernel ergodic metric of a trajectory (or ``(N, n)`` point set).

    ``scale`` multiplies the target density, e.g. ``1 / mass`` to renormalise
    a mixture to the part of it inside a bounded search domain. The constant
    term is then ``scale**2`` times the full-space integral of ``p**2``.
    """
    x = _as_points(traj, p.dim)
    th = _theta_vector(theta, p.dim)
    N = len(x)
    self_term = _self_similarity(x, th, workers) / N**2
    info_term = 2.0 * scale * _fixed_sum(gmm_pdf(p, x)) / N
    return self_term - info_term + scale**2 * gmm_sq_integral(p)


def ergodic_grad(
    traj,
    p: GaussianMixture,
    theta: ArrayLike,
    workers: int = 1,
    accumulate: str = "dense",
    scale: float = 1.0,
) -> NDArray:
    """Gradient of :func:`ergodic_metric` with respect to each visited point.

    ``accumulate="pairs"`` evaluates each unordered pair once and scatters it
    to both rows; ``"dense"`` evaluates the full block matrix.
    """
    x = _as_points(traj, p.dim)
    th = _theta_vector(theta, p.dim)
    N = len(x)
    if accumulate == "pairs":
        kg = _kernel_grad_rows_pairs(x, th)
    elif accumulate == "dense":
        kg = _kernel_grad_rows(x, th, workers)
    else:
        raise ValueError(f"unknown accumulation {accumulate!r}")
    return -2.0 * scale / N * gmm_grad(p, x) + 2.0 / N**2 * kg


# ---------------------------------------------------------------------------
# Lie kernel


@dataclass(frozen=True)
class LieKernel:
    """Squared-exponential kernel on a matrix group.

    ``theta`` are tangent-space variances; ``M = diag(theta)^-1`` and the
    amplitude is the matching Gaussian normalisation.
    """

    theta: NDArray

    @classmethod
    def from_theta(cls, theta: ArrayLike, kind: lg.Kind) -> "LieKernel":
        return cls(_theta_vector(theta, lg.tangent_dim(kind)))

    @property
    def weight(self) -> NDArray:
        return np.diag(1.0 / self.theta)

    @property
    def amplitude(self) -> float:
        d = len(self.theta)
        return float(np.exp(-0.5 * (d * np.log(2 * np.pi) + np.log(self.theta).sum())))


def _lie_params(params, kind) -> LieKernel:
    if isinstance(params, LieKernel):
        if len(params.theta) != lg.tangent_dim(kind):
            raise DimMismatch("kernel parameter length does not match the group")
        return params
    return LieKernel.from_theta(params, kind)


def lie_kernel_eval(g1, g2, params) -> NDArray:
    g1 = lg._mat(g1)
    kern = _lie_params(params, lg.kind_of_matrix(g1))
    q = lg.lie_quadratic(g1, g2, kern.weight)
    return kern.amplitude * np.exp(-q)


def lie_kernel_grad1(g1, g2, params) -> NDArray:
    """Left-trivialised derivative of :func:`lie_kernel_eval` in ``g1``."""
    g1 = lg._mat(g1)
    kern = _lie_params(params, lg.kind_of_matrix(g1))
    val = lie_kernel_eval(g1, g2, kern)
    return -val[..., None] * lg.lie_quadratic_d1(g1, g2, kern.weight)


def _lie_pair_block(g: NDArray, ginv: NDArray, rows: slice, kern: LieKernel, with_grad: bool):
    h = ginv[None, :] @ g[rows, None]  # h[i, j] = g_j^-1 g_i
    try:
        xi = lg.log_map(h)
    except BranchError as exc:
        i, j = exc.index[:2]
        raise BranchError(
            f"pair ({rows.start + i}, {j}) is too far apart for the log map",
            index=(rows.start + i, j),
        ) from exc
    M = kern.weight
    q = 0.5 * np.einsum("...i,ij,...j->...", xi, M, xi)
    phi = kern.amplitude * np.exp(-q)
    if not with_grad:
        return phi.sum()
    d1 = np.einsum("abji,jk,abk->abi", lg.dexp_inv(-xi), M, xi)
    return phi.sum(), -np.einsum("ab,abi->ai", phi, d1)


def lie_ergodic_metric(traj, p: LieGaussianMixture, params, workers: int = 1) -> float:
    """Kernel ergodic metric on a group, without the constant ``int P^2`` term."""
    g = _as_group_states(traj)
    if g.shape[-2:] != p.means.shape[-2:]:
        raise DimMismatch("trajectory and target live on different groups")
    kern = _lie_params(params, p.kind)
    ginv = lg.inverse(g)
    N = len(g)
    parts = _blocked(N, lambda r: _lie_pair_block(g, ginv, r, kern, False), workers)
    return _fixed_sum(parts) / N**2 - 2.0 * _fixed_sum(lie_gmm_pdf(p, g)) / N


def lie_ergodic_grad(traj, p: LieGaussianMixture, params, workers: int = 1) -> NDArray:
    """Trivialised gradient rows ``(T, d)`` of :func:`lie_ergodic_metric`."""
    g = _as_group_states(traj)
    if g.shape[-2:] != p.means.shape[-2:]:
        raise DimMismatch("trajectory and target live on different groups")
    kern = _lie_params(params, p.kind)
    ginv = lg.inverse(g)
    N = len(g)
    parts = _blocked(N, lambda r: _lie_pair_block(g, ginv, r, kern, True)[1], workers)
    # the kernel is symmetric, so both argument slots contribute equally
    kg = np.concatenate(parts, axis=0)
    return -2.0 / N * lie_gmm_grad(p, g) + 2.0 / N**2 * kg


# ---------------------------------------------------------------------------
# kernel parameter selection


def kernel_tuning_objective(samples: ArrayLike, p: GaussianMixture, theta: ArrayLike) -> float:
    """Squared norm of the sample-wise gradient of the empirical metric.

    For i.i.d. samples from ``p`` a well-chosen kernel makes the samples a
    stationary point, so this quantity is small.
    """
    x = _as_points(samples, p.dim)
    th = _theta_vector(theta, p.dim)
    N = len(x)
    G = -gmm_grad(p, x) / N + 2.0 / N**2 * _kernel_grad_rows(x, th, 1)
    return float(np.sum(G * G))


def kernel_sweep(samples: ArrayLike, p: GaussianMixture, grid: Sequence) -> NDArray:
    return np.array([kernel_tuning_objective(samples, p, th) for th in grid])


def tune_kernel(samples: ArrayLike, p: GaussianMixture, grid: Sequence):
    """Grid candidate minimising :func:`kernel_tuning_objective`.

    Exact ties go to the larger kernel (smoother, more uniform coverage).
    """
    grid = list(grid)
    if not grid:
        raise EmptyGrid("kernel grid is empty")
    values = kernel_sweep(samples, p, grid)
    best = values.min()
    ties = [i for i, v in enumerate(values) if v == best]
    pick = max(ties, key=lambda i: float(np.sum(grid[i])))
    return grid[pick]


def log_grid(lo: float, hi: float, num: int) -> list[float]:
    if num < 1:
        raise EmptyGrid("kernel grid is empty")
    return [float(v) for v in np.geomspace(lo, hi, num)]
