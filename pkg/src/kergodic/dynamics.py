"""System models, rollouts and linearisations.

States and controls are indexed ``0 .. T-1`` with ``states[0] = s0`` and
``states[k + 1] = step(states[k], controls[k])``. The last control only enters
running costs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import liegroups as lg
from .errors import DimMismatch, ModelMismatch, NonFiniteControl
from .metric import EuclideanTrajectory, LieTrajectory


@dataclass(frozen=True)
class FirstOrder:
    """Single integrator ``x' = u``."""

    n: int

    @property
    def state_dim(self) -> int:
        return self.n

    @property
    def control_dim(self) -> int:
        return self.n

    @property
    def position_dim(self) -> int:
        return self.n

    is_lie = False

    def step(self, x: NDArray, u: NDArray, dt: float) -> NDArray:
        return x + dt * u

    def continuous_jacobians(self, x: NDArray, u: NDArray) -> tuple[NDArray, NDArray]:
        return np.zeros((self.n, self.n)), np.eye(self.n)

    def discrete_jacobians(self, x: NDArray, u: NDArray, dt: float) -> tuple[NDArray, NDArray]:
        return np.eye(self.n), dt * np.eye(self.n)


@dataclass(frozen=True)
class SecondOrder:
    """Double integrator with state ``(position, velocity)`` and acceleration input.

    Discretised semi-implicitly: velocity is updated first and the new
    velocity moves the position.
    """

    n: int

    @property
    def state_dim(self) -> int:
        return 2 * self.n

    @property
    def control_dim(self) -> int:
        return self.n

    @property
    def position_dim(self) -> int:
        return self.n

    is_lie = False

    def step(self, x: NDArray, u: NDArray, dt: float) -> NDArray:
        n = self.n
        v = x[..., n:] + dt * u
        return np.concatenate([x[..., :n] + dt * v, v], axis=-1)

    def continuous_jacobians(self, x: NDArray, u: NDArray) -> tuple[NDArray, NDArray]:
        n = self.n
        A = np.zeros((2 * n, 2 * n))
        A[:n, n:] = np.eye(n)
        B = np.zeros((2 * n, n))
        B[n:] = np.eye(n)
        return A, B

    def discrete_jacobians(self, x: NDArray, u: NDArray, dt: float) -> tuple[NDArray, NDArray]:
        n = self.n
        I = np.eye(n)
        A = np.block([[I, dt * I], [np.zeros((n, n)), I]])
        B = np.vstack([dt * dt * I, dt * I])
        return A, B


def _default_basis(kind: lg.Kind) -> NDArray:
    return np.eye(lg.tangent_dim(kind))


@dataclass(frozen=True, eq=False)
class LieKinematic:
    """Body-velocity kinematics ``g' = g (E u)^`` on SO(3) or SE(3).

    ``basis`` (``d x m``) maps the ``m`` control inputs to the body twist;
    it defaults to the identity so every tangent direction is actuated.
    """

    kind: lg.Kind
    basis: NDArray = field(default=None)

    def __post_init__(self):
        if self.kind not in ("SO3", "SE3"):
            raise ValueError(f"unknown group kind {self.kind!r}")
        d = lg.tangent_dim(self.kind)
        E = _default_basis(self.kind) if self.basis is None else np.array(self.basis, dtype=float)
        if E.ndim != 2 or E.shape[0] != d:
            raise DimMismatch(f"control basis must have {d} rows, got shape {E.shape}")
        E.setflags(write=False)
        object.__setattr__(self, "basis", E)

    @property
    def state_dim(self) -> int:
        return lg.tangent_dim(self.kind)

    @property
    def control_dim(self) -> int:
        return self.basis.shape[1]

    is_lie = True

    def twist(self, u: NDArray) -> NDArray:
        return np.asarray(u, dtype=float) @ self.basis.T

    def step(self, g: NDArray, u: NDArray, dt: float) -> NDArray:
        return g @ lg.exp_map(dt * self.twist(u))

    def continuous_jacobians(self, g: NDArray, u: NDArray) -> tuple[NDArray, NDArray]:
        """Right-perturbation error dynamics ``z' = -ad(lam) z + E du``."""
        return -lg.ad_matrix(self.twist(u)), self.basis.copy()

    def discrete_jacobians(self, g: NDArray, u: NDArray, dt: float) -> tuple[NDArray, NDArray]:
        """Exact one-step Jacobians for ``g exp(z) exp(dt lam)``."""
        lam = dt * self.twist(u)
        A = lg.adjoint_matrix(lg.exp_map(-lam))
        B = dt * lg.dexp(-lam) @ self.basis
        return A, B


SystemModel = Union[FirstOrder, SecondOrder, LieKinematic]


def _check_controls(model: SystemModel, controls: ArrayLike) -> NDArray:
    u = np.asarray(controls, dtype=float)
    if u.ndim != 2 or u.shape[1] != model.control_dim:
        raise DimMismatch(f"controls must have shape (T, {model.control_dim}), got {u.shape}")
    bad = ~np.isfinite(u).all(axis=1)
    if bad.any():
        raise NonFiniteControl(f"non-finite control at step {int(np.argmax(bad))}")
    return u


def rollout(model: SystemModel, s0: ArrayLike, controls: ArrayLike, dt: float):
    """Integrate ``controls`` from ``s0`` and return a trajectory object."""
    u = _check_controls(model, controls)
    T = u.shape[0]
    s0 = np.asarray(s0, dtype=float)
    if model.is_lie:
        if s0.shape != (lg.matrix_dim(model.kind),) * 2:
            raise ModelMismatch(f"initial state is not a {model.kind} matrix")
        twists = dt * model.twist(u[:-1])
        steps = lg.exp_map(twists) if T > 1 else np.zeros((0,) + s0.shape)
        states = np.empty((T,) + s0.shape)
        states[0] = s0
        for k in range(T - 1):
            states[k + 1] = states[k] @ steps[k]
        return LieTrajectory(states, u, dt)
    if s0.shape != (model.state_dim,):
        raise ModelMismatch(f"initial state must have shape ({model.state_dim},), got {s0.shape}")
    states = np.empty((T, model.state_dim))
    states[0] = s0
    for k in range(T - 1):
        states[k + 1] = model.step(states[k], u[k], dt)
    return EuclideanTrajectory(states, u, dt)


def linearize(model: SystemModel, traj, discrete: bool = True) -> tuple[NDArray, NDArray]:
    """Stacked Jacobians ``A (T, n, n)`` and ``B (T, n, m)`` along ``traj``.

    ``discrete=False`` returns the continuous-time Jacobians, the ``dt -> 0``
    limit of ``(A_d - I) / dt`` and ``B_d / dt``.
    """
    check_trajectory(model, traj)
    T = traj.horizon
    n, m = model.state_dim, model.control_dim
    A = np.empty((T, n, n))
    B = np.empty((T, n, m))
    for k in range(T):
        if discrete:
            A[k], B[k] = model.discrete_jacobians(traj.states[k], traj.controls[k], traj.dt)
        else:
            A[k], B[k] = model.continuous_jacobians(traj.states[k], traj.controls[k])
    return A, B


def check_trajectory(model: SystemModel, traj) -> None:
    if model.is_lie:
        if not isinstance(traj, LieTrajectory) or traj.kind != model.kind:
            raise ModelMismatch(f"expected a {model.kind} trajectory")
    else:
        if not isinstance(traj, EuclideanTrajectory) or traj.states.shape[1] != model.state_dim:
            raise ModelMismatch(f"expected a Euclidean trajectory with state dim {model.state_dim}")
    if traj.controls.shape[1] != model.control_dim:
        raise ModelMismatch(f"expected control dim {model.control_dim}")


def state_difference(model: SystemModel, a: NDArray, b: NDArray) -> NDArray:
    """Error coordinates of ``a`` relative to ``b`` (``log(b^-1 a)`` on groups)."""
    if model.is_lie:
        return lg.log_map(lg.inverse(b) @ a)
    return a - b
