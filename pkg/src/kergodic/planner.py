"""Iterative LQR for the kernel ergodic objective.

The objective is ``J = E(s) + dt * sum_k l(s_k, u_k)`` with the kernel ergodic
metric ``E`` and running cost ``l = 0.5 u^T W u + barrier(s)``. Each iteration
linearises the dynamics along the current rollout, solves an LQR problem for
a descent direction in the controls and backtracks along it.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import liegroups as lg
from .distributions import (
    GaussianMixture,
    LieGaussianMixture,
    gmm_box_mass,
    gmm_sample,
    lie_gmm_sample,
)
from .dynamics import SystemModel, check_trajectory, linearize, rollout
from .errors import (
    BranchError,
    DimMismatch,
    KergodicError,
    LineSearchFailure,
    NonFiniteControl,
    RiccatiBlowup,
)
from .metric import ergodic_grad, ergodic_metric, lie_ergodic_grad, lie_ergodic_metric

logger = logging.getLogger(__name__)

ARMIJO_BETA = 0.5
ARMIJO_C = 1e-4
ARMIJO_MAX_HALVINGS = 20
MAX_ITERS = 100
DELTA_J_TOL = 1e-6
DELTA_J_PATIENCE = 3
PSD_TOL = -1e-9
DEFAULT_R_SCALE = 0.1
DEFAULT_CONTROL_WEIGHT = 1e-3
DEFAULT_BARRIER_WEIGHT = 1e2
BOOTSTRAP_ITERS = 10
STALL_RATIO = 0.5


def _spd(M: ArrayLike, n: int, name: str) -> NDArray:
    M = np.array(M, dtype=float)
    if M.shape != (n, n):
        raise DimMismatch(f"{name} must be {n}x{n}, got {M.shape}")
    if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() <= 0:
        raise ValueError(f"{name} must be symmetric positive definite")
    M.setflags(write=False)
    return M


@dataclass(frozen=True, eq=False)
class SearchSpace:
    """Axis-aligned box ``[lower, upper]`` for the position coordinates."""

    lower: NDArray
    upper: NDArray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DimMismatch("lower and upper bounds differ in length")
        if not np.all(lo < hi):
            raise ValueError("lower must be strictly below upper in every dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, n: int) -> "SearchSpace":
        return cls(np.zeros(n), np.ones(n))

    @property
    def dim(self) -> int:
        return len(self.lower)

    def sample(self, rng: np.random.Generator) -> NDArray:
        return rng.uniform(self.lower, self.upper)


@dataclass(frozen=True)
class BarrierSpec:
    """Quadratic hinge penalty ``weight * sum(max(0, s - hi)^2 + max(0, lo - s)^2)``."""

    weight: float = DEFAULT_BARRIER_WEIGHT


@dataclass(frozen=True, eq=False)
class ErgodicProblem:
    model: SystemModel
    target: GaussianMixture | LieGaussianMixture
    theta: NDArray
    s0: NDArray
    T: int
    dt: float
    Q: NDArray
    R: NDArray
    control_weight: NDArray
    barrier: BarrierSpec | None = None
    domain: SearchSpace | None = None
    ergodic_weight: float = 1.0
    target_scale: float = 1.0

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("horizon must be at least 2 steps")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        m, n = self.model.control_dim, self.model.state_dim
        object.__setattr__(self, "Q", _spd(self.Q, n, "Q"))
        object.__setattr__(self, "R", _spd(self.R, m, "R"))
        W = np.array(self.control_weight, dtype=float)
        if W.shape != (m, m) or np.linalg.eigvalsh(0.5 * (W + W.T)).min() < 0:
            raise ValueError(f"control weight must be a {m}x{m} positive semidefinite matrix")
        object.__setattr__(self, "control_weight", W)
        theta = np.array(self.theta, dtype=float).reshape(-1)
        if theta.size == 1:
            theta = np.full(self.target.dim, theta[0])
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "s0", np.array(self.s0, dtype=float))
        if self.model.is_lie:
            if not isinstance(self.target, LieGaussianMixture) or self.target.kind != self.model.kind:
                raise DimMismatch("Lie model needs a Lie mixture of the same group")
            if self.barrier is not None:
                raise ValueError("the boundary barrier is only defined for Euclidean problems")
        else:
            if not isinstance(self.target, GaussianMixture):
                raise DimMismatch("Euclidean model needs a Euclidean mixture")
            if self.target.dim != self.model.position_dim:
                raise DimMismatch("target and model position dimensions differ")
            if self.barrier is not None and self.domain is None:
                raise ValueError("a barrier needs a search domain")
            if self.domain is not None and self.domain.dim != self.model.position_dim:
                raise DimMismatch("domain and model position dimensions differ")

    @classmethod
    def with_defaults(
        cls,
        model: SystemModel,
        target,
        theta: ArrayLike,
        s0: ArrayLike,
        T: int = 200,
        dt: float = 0.1,
        domain: SearchSpace | None = None,
        barrier: bool | None = None,
        renormalize: bool = True,
        **overrides,
    ) -> "ErgodicProblem":
        """Problem with ``Q = I``, ``R = 0.1 I`` and small control regulation.

        The barrier defaults to on for Euclidean problems with a domain. With
        ``renormalize`` the target density is rescaled to unit mass inside
        the domain, so coverage is not spent on mass the barrier excludes.
        """
        n, m = model.state_dim, model.control_dim
        if barrier is None:
            barrier = domain is not None and not model.is_lie
        if renormalize and domain is not None and not model.is_lie:
            overrides.setdefault("target_scale", 1.0 / gmm_box_mass(target, domain.lower, domain.upper))
        kw = dict(
            Q=np.eye(n),
            R=DEFAULT_R_SCALE * np.eye(m),
            control_weight=DEFAULT_CONTROL_WEIGHT * np.eye(m),
            barrier=BarrierSpec() if barrier else None,
        )
        kw.update(overrides)
        return cls(model=model, target=target, theta=theta, s0=s0, T=T, dt=dt, domain=domain, **kw)

    @property
    def is_lie(self) -> bool:
        return self.model.is_lie

    def metadata(self) -> dict:
        return {
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "control_weight": self.control_weight.tolist(),
            "barrier_weight": None if self.barrier is None else self.barrier.weight,
            "theta": self.theta.tolist(),
            "target_scale": self.target_scale,
            "T": self.T,
            "dt": self.dt,
            "armijo_beta": ARMIJO_BETA,
            "armijo_c": ARMIJO_C,
            "max_iters": MAX_ITERS,
            "delta_j_tol": DELTA_J_TOL,
        }


# ---------------------------------------------------------------------------
# cost pieces


def ergodic_value(problem: ErgodicProblem, traj, workers: int = 1) -> float:
    if problem.ergodic_weight == 0:
        return 0.0
    if problem.is_lie:
        e = lie_ergodic_metric(traj, problem.target, problem.theta, workers=workers)
    else:
        e = ergodic_metric(traj, problem.target, problem.theta, workers, problem.target_scale)
    return problem.ergodic_weight * e


def _barrier_terms(problem: ErgodicProblem, x: NDArray) -> tuple[NDArray, NDArray]:
    """Per-step barrier value and its gradient in the position coordinates."""
    lo, hi = problem.domain.lower, problem.domain.upper
    over = np.maximum(x - hi, 0.0)
    under = np.maximum(lo - x, 0.0)
    w = problem.barrier.weight
    return w * np.sum(over**2 + under**2, axis=1), 2.0 * w * (over - under)


def running_cost(problem: ErgodicProblem, traj) -> float:
    """``dt * sum_k l(s_k, u_k)``."""
    u = traj.controls
    per_step = 0.5 * np.einsum("ki,ij,kj->k", u, problem.control_weight, u)
    if problem.barrier is not None:
        per_step = per_step + _barrier_terms(problem, traj.states[:, : problem.model.position_dim])[0]
    return float(problem.dt * per_step.sum())


def objective(problem: ErgodicProblem, traj, workers: int = 1) -> float:
    check_trajectory(problem.model, traj)
    if traj.horizon != problem.T:
        raise DimMismatch(f"trajectory has {traj.horizon} steps, problem expects {problem.T}")
    return ergodic_value(problem, traj, workers) + running_cost(problem, traj)


def cost_gradients(problem: ErgodicProblem, traj, workers: int = 1) -> tuple[NDArray, NDArray]:
    """Per-step linear terms ``a (T, n)`` and ``b (T, m)``.

    Scaled so that ``dJ = dt * sum_k (a_k . dz_k + b_k . dv_k)``.
    """
    dt = problem.dt
    n = problem.model.state_dim
    a = np.zeros((traj.horizon, n))
    if problem.ergodic_weight != 0:
        if problem.is_lie:
            g = lie_ergodic_grad(traj, problem.target, problem.theta, workers=workers)
        else:
            g = ergodic_grad(traj, problem.target, problem.theta, workers, scale=problem.target_scale)
        a[:, : g.shape[1]] += problem.ergodic_weight * g / dt
    if problem.barrier is not None:
        k = problem.model.position_dim
        a[:, :k] += _barrier_terms(problem, traj.states[:, :k])[1]
    b = traj.controls @ problem.control_weight.T
    return a, b


# ---------------------------------------------------------------------------
# LQR descent direction


@dataclass(frozen=True, eq=False)
class DescentDirection:
    """Control direction ``v`` with its linearised state response ``z``."""

    v: NDArray
    z: NDArray
    K: NDArray
    kff: NDArray

    def directional_derivative(self, a: NDArray, b: NDArray, dt: float) -> float:
        return float(dt * (np.sum(a * self.z) + np.sum(b * self.v)))


def solve_lqr_subproblem(
    A: NDArray, B: NDArray, a: NDArray, b: NDArray, Q: NDArray, R: NDArray, dt: float
) -> DescentDirection:
    """Minimise ``sum_k dt (z'Qz + v'Rv + a'z + b'v)`` with ``z+ = A z + B v``, ``z_0 = 0``.

    Backward affine Riccati recursion followed by a forward pass.
    """
    A, B, a, b = (np.asarray(t, dtype=float) for t in (A, B, a, b))
    T, n, m = B.shape
    if A.shape != (T, n, n) or a.shape != (T, n) or b.shape != (T, m):
        raise DimMismatch("linearisation and gradient shapes are inconsistent")
    P = np.zeros((n, n))
    p = np.zeros(n)
    K = np.empty((T, m, n))
    kff = np.empty((T, m))
    for k in range(T - 1, -1, -1):
        Ak, Bk = A[k], B[k]
        PA = P @ Ak
        Qzz = dt * Q + Ak.T @ PA
        Qvv = dt * R + Bk.T @ P @ Bk
        Qvz = Bk.T @ PA
        qz = dt * a[k] + Ak.T @ p
        qv = dt * b[k] + Bk.T @ p
        try:
            L = np.linalg.cholesky(0.5 * (Qvv + Qvv.T))
        except np.linalg.LinAlgError as exc:
            raise RiccatiBlowup(f"control Hessian not positive definite at step {k}") from exc
        sol = np.linalg.solve(L.T, np.linalg.solve(L, np.column_stack([Qvz, qv])))
        K[k] = -sol[:, :n]
        kff[k] = -0.5 * sol[:, n]
        P = Qzz + Qvz.T @ K[k]
        P = 0.5 * (P + P.T)
        p = qz + K[k].T @ qv
        if not np.all(np.isfinite(P)) or np.linalg.eigvalsh(P).min() < PSD_TOL * max(1.0, np.abs(P).max()):
            raise RiccatiBlowup(f"value matrix lost positive semidefiniteness at step {k}")
    z = np.zeros((T, n))
    v = np.empty((T, m))
    for k in range(T):
        v[k] = K[k] @ z[k] + kff[k]
        if k + 1 < T:
            z[k + 1] = A[k] @ z[k] + B[k] @ v[k]
    return DescentDirection(v, z, K, kff)


def control_gradient(A: NDArray, B: NDArray, a: NDArray, b: NDArray, dt: float) -> NDArray:
    """``dJ/du`` by an adjoint sweep through the discrete linearisation."""
    T = len(B)
    g = dt * np.asarray(b, dtype=float).copy()
    lam = np.zeros(A.shape[1])
    for k in range(T - 1, -1, -1):
        g[k] += B[k].T @ lam
        lam = dt * a[k] + A[k].T @ lam
    return g


# ---------------------------------------------------------------------------
# line search


def _safe_eval(problem: ErgodicProblem, controls: NDArray, workers: int):
    """Rollout and objective, or ``(None, inf)`` if the candidate is unusable."""
    try:
        traj = rollout(problem.model, problem.s0, controls, problem.dt)
        J = objective(problem, traj, workers)
    except (NonFiniteControl, BranchError, KergodicError, FloatingPointError):
        return None, np.inf
    return traj, (J if np.isfinite(J) else np.inf)


@dataclass(frozen=True)
class LineSearchResult:
    step: float
    traj: object
    objective: float
    evaluations: int


def armijo_search(
    problem: ErgodicProblem,
    traj,
    v: NDArray,
    J0: float,
    directional_derivative: float,
    workers: int = 1,
) -> LineSearchResult:
    """Largest ``eta`` in ``1, beta, ..., beta^19`` passing the Armijo test."""
    if not directional_derivative < 0 or not np.any(v):
        return LineSearchResult(0.0, traj, J0, 0)
    eta = 1.0
    for i in range(ARMIJO_MAX_HALVINGS):
        cand, J = _safe_eval(problem, traj.controls + eta * v, workers)
        if J <= J0 + ARMIJO_C * eta * directional_derivative:
            return LineSearchResult(eta, cand, J, i + 1)
        eta *= ARMIJO_BETA
    raise LineSearchFailure(f"no acceptable step after {ARMIJO_MAX_HALVINGS} trials")


# ---------------------------------------------------------------------------
# outer loop


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    ergodic_metric: float
    step: float
    evaluations: int
    wall_time: float
    directional_derivative: float


@dataclass
class OptimizationReport:
    iterations: list[IterationRecord] = field(default_factory=list)
    termination: str = ""
    failed: bool = False
    message: str = ""
    metadata: dict = field(default_factory=dict)
    initial_grad_norm: float = float("nan")
    final_grad_norm: float = float("nan")

    @property
    def objectives(self) -> list[float]:
        return [r.objective for r in self.iterations]

    @property
    def n_iterations(self) -> int:
        """Number of accepted optimisation steps (the initial record excluded)."""
        return max(len(self.iterations) - 1, 0)

    def to_dicts(self) -> list[dict]:
        rows = [asdict(r) for r in self.iterations]
        if rows:
            rows[0]["metadata"] = self.metadata
            rows[-1].update(
                termination=self.termination,
                failed=self.failed,
                message=self.message,
                initial_grad_norm=self.initial_grad_norm,
                final_grad_norm=self.final_grad_norm,
            )
        return rows

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for row in self.to_dicts():
                fh.write(json.dumps(row) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "OptimizationReport":
        rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        rep = cls()
        names = IterationRecord.__dataclass_fields__
        for row in rows:
            rep.iterations.append(IterationRecord(**{k: row[k] for k in names}))
        if rows:
            rep.metadata = rows[0].get("metadata", {})
            rep.termination = rows[-1].get("termination", "")
            rep.failed = rows[-1].get("failed", False)
            rep.message = rows[-1].get("message", "")
            rep.initial_grad_norm = rows[-1].get("initial_grad_norm", float("nan"))
            rep.final_grad_norm = rows[-1].get("final_grad_norm", float("nan"))
        return rep


def optimize(
    problem: ErgodicProblem,
    u_init: ArrayLike,
    max_iters: int = MAX_ITERS,
    tol: float = DELTA_J_TOL,
    workers: int = 1,
    callback: Callable | None = None,
    clock: Callable[[], float] = time.perf_counter,
):
    """Run iLQR from ``u_init``; returns ``(trajectory, report)``.

    Solver failures end the loop and are recorded in the report; the best
    (last accepted) trajectory is always returned. A run that meets the
    ``|dJ|`` test while the control gradient is still above half its initial
    norm is reported as ``stalled`` (typically a badly scaled ``R``).
    """
    u = np.array(u_init, dtype=float)
    if u.shape != (problem.T, problem.model.control_dim):
        raise DimMismatch(f"u_init must have shape ({problem.T}, {problem.model.control_dim})")
    report = OptimizationReport(metadata=problem.metadata())
    t0 = clock()
    traj = rollout(problem.model, problem.s0, u, problem.dt)
    J = objective(problem, traj, workers)
    report.iterations.append(
        IterationRecord(0, J, ergodic_value(problem, traj, workers), 0.0, 1, 0.0, 0.0)
    )
    if callback is not None:
        callback(0, traj)
    small = 0
    for it in range(1, max_iters + 1):
        try:
            a, b = cost_gradients(problem, traj, workers)
            A, B = linearize(problem.model, traj)
            gnorm = float(np.linalg.norm(control_gradient(A, B, a, b, problem.dt)))
            if it == 1:
                report.initial_grad_norm = gnorm
            report.final_grad_norm = gnorm
            d = solve_lqr_subproblem(A, B, a, b, problem.Q, problem.R, problem.dt)
            dd = d.directional_derivative(a, b, problem.dt)
            res = armijo_search(problem, traj, d.v, J, dd, workers)
        except LineSearchFailure as exc:
            report.termination, report.message = "line_search_failure", str(exc)
            break
        except (RiccatiBlowup, BranchError, NonFiniteControl, FloatingPointError, np.linalg.LinAlgError) as exc:
            report.termination, report.failed, report.message = "solver_failure", True, str(exc)
            logger.warning("optimisation stopped: %s", exc)
            break
        if res.step == 0.0:
            report.termination = "stationary"
            break
        dJ = J - res.objective
        traj, J = res.traj, res.objective
        report.iterations.append(
            IterationRecord(
                it,
                J,
                ergodic_value(problem, traj, workers),
                res.step,
                res.evaluations,
                clock() - t0,
                dd,
            )
        )
        if callback is not None:
            callback(it, traj)
        small = small + 1 if abs(dJ) < tol else 0
        if small >= DELTA_J_PATIENCE:
            report.termination = "converged"
            break
    else:
        report.termination = "max_iters"
    if (
        report.termination == "converged"
        and report.initial_grad_norm > 1e-12
        and report.final_grad_norm > STALL_RATIO * report.initial_grad_norm
    ):
        report.termination, report.failed = "stalled", True
        report.message = "objective stopped changing while the gradient stayed large"
    return traj, report


# ---------------------------------------------------------------------------
# bootstrap initialisation


def nearest_neighbor_order(start: NDArray, points: NDArray, metric: Callable | None = None) -> list[int]:
    """Greedy nearest-neighbour tour from ``start`` through ``points``."""
    if metric is None:
        def metric(x, ys):
            return np.linalg.norm(ys - x, axis=-1)
    remaining = list(range(len(points)))
    order = []
    current = start
    while remaining:
        dists = metric(current, points[remaining])
        j = remaining.pop(int(np.argmin(dists)))
        order.append(j)
        current = points[j]
    return order


def _resample_polyline(nodes: NDArray, T: int) -> NDArray:
    """Constant-speed resampling of a polyline to ``T`` points."""
    seg = np.linalg.norm(np.diff(nodes, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.repeat(nodes[:1], T, axis=0)
    q = np.linspace(0.0, s[-1], T)
    return np.stack([np.interp(q, s, nodes[:, i]) for i in range(nodes.shape[1])], axis=1)


def _resample_geodesic(nodes: NDArray, T: int) -> NDArray:
    """Constant-speed resampling along piecewise geodesics on a group."""
    steps = lg.log_map(lg.inverse(nodes[:-1]) @ nodes[1:])
    seg = np.linalg.norm(steps, axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.repeat(nodes[:1], T, axis=0)
    q = np.linspace(0.0, s[-1], T)
    idx = np.clip(np.searchsorted(s, q, side="right") - 1, 0, len(steps) - 1)
    frac = np.where(seg[idx] > 0, (q - s[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0), 0.0)
    return nodes[idx] @ lg.exp_map(frac[:, None] * steps[idx])


def reference_path(problem: ErgodicProblem, samples: NDArray) -> NDArray:
    """Nearest-neighbour ordered reference through ``samples`` from ``s0``."""
    T = problem.T
    if problem.is_lie:
        start = problem.s0

        def geo(x, ys):
            return np.linalg.norm(lg.log_map(lg.inverse(x) @ ys), axis=-1)

        order = nearest_neighbor_order(start, samples, geo)
        return _resample_geodesic(np.concatenate([start[None], samples[order]]), T)
    k = problem.model.position_dim
    start = problem.s0[:k]
    order = nearest_neighbor_order(start, samples)
    return _resample_polyline(np.vstack([start, samples[order]]), T)


@dataclass(frozen=True, eq=False)
class _TrackingProblem:
    """Quadratic tracking of a reference, solved with the same LQR step."""

    base: ErgodicProblem
    ref: NDArray

    def cost(self, traj) -> float:
        u = traj.controls
        e = self.errors(traj)
        W = self.base.control_weight
        return float(self.base.dt * (0.5 * np.sum(e * e) + 0.5 * np.einsum("ki,ij,kj->", u, W, u)))

    def errors(self, traj) -> NDArray:
        if self.base.is_lie:
            return lg.relative_log(traj.states, self.ref)
        return traj.states[:, : self.base.model.position_dim] - self.ref

    def gradients(self, traj) -> tuple[NDArray, NDArray]:
        n = self.base.model.state_dim
        a = np.zeros((traj.horizon, n))
        if self.base.is_lie:
            a[:] = lg.lie_quadratic_d1(traj.states, self.ref, np.eye(n))
        else:
            a[:, : self.ref.shape[1]] = self.errors(traj)
        return a, traj.controls @ self.base.control_weight.T


def bootstrap(problem: ErgodicProblem, rng: np.random.Generator, iters: int = BOOTSTRAP_ITERS) -> NDArray:
    """Initial controls from tracking a sample-based tour of the target."""
    count = max(1, problem.T // 10)
    if problem.is_lie:
        samples = lie_gmm_sample(problem.target, rng, count)
    else:
        samples = gmm_sample(problem.target, rng, count)
        if problem.domain is not None:
            samples = np.clip(samples, problem.domain.lower, problem.domain.upper)
    ref = reference_path(problem, samples)
    return track_reference(problem, ref, iters)


def track_reference(problem: ErgodicProblem, ref: NDArray, iters: int = BOOTSTRAP_ITERS) -> NDArray:
    """Controls that follow ``ref`` (positions, or group states on a Lie model)."""
    track = _TrackingProblem(problem, np.asarray(ref, dtype=float))
    model, dt = problem.model, problem.dt
    n, m = model.state_dim, model.control_dim
    # Hessians matching the tracking cost make the LQR step a Gauss-Newton step.
    Qt = 0.5 * np.eye(n)
    if not model.is_lie:
        Qt[model.position_dim :, model.position_dim :] = 1e-6 * np.eye(n - model.position_dim)
    Rt = 0.5 * problem.control_weight + 1e-9 * np.eye(m)
    u = np.zeros((problem.T, m))
    traj = rollout(model, problem.s0, u, dt)
    J = track.cost(traj)
    for _ in range(iters):
        a, b = track.gradients(traj)
        A, B = linearize(model, traj)
        d = solve_lqr_subproblem(A, B, a, b, Qt, Rt, dt)
        dd = d.directional_derivative(a, b, dt)
        if not dd < 0:
            break
        eta = 1.0
        for _ in range(ARMIJO_MAX_HALVINGS):
            try:
                cand = rollout(model, problem.s0, traj.controls + eta * d.v, dt)
                Jc = track.cost(cand)
            except (KergodicError, FloatingPointError):
                Jc = np.inf
            if Jc <= J + ARMIJO_C * eta * dd:
                break
            eta *= ARMIJO_BETA
        else:
            break
        traj, J = cand, Jc
    return traj.controls.copy()

