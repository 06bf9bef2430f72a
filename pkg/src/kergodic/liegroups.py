"""Matrix-group primitives for SO(3) and SE(3).

Every function is vectorised over leading axes.  The group is inferred from
trailing shapes: tangent vectors of length 3 / 6 and matrices of size 3x3 /
4x4 belong to SO(3) / SE(3) respectively.  SE(3) tangent coordinates stack
the rotational part over the translational part, ``xi = (omega, nu)``.

Derivatives are left-trivialised: a perturbation of ``g`` is written
``g @ exp(eps * z)`` and a gradient is the covector pairing with ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import BranchError, KindMismatch, StructureError

Kind = Literal["SO3", "SE3"]

# closed forms below this angle lose digits to cancellation; use series
SERIES_THRESHOLD = 0.1
BRANCH_MARGIN = 1e-6
SKEW_TOL = 1e-9
ORTHO_TOL = 1e-9

_TANGENT_DIM = {"SO3": 3, "SE3": 6}
_MATRIX_DIM = {"SO3": 3, "SE3": 4}


def tangent_dim(kind: Kind) -> int:
    return _TANGENT_DIM[kind]


def matrix_dim(kind: Kind) -> int:
    return _MATRIX_DIM[kind]


def kind_of_tangent(v: NDArray) -> Kind:
    n = v.shape[-1]
    if n == 3:
        return "SO3"
    if n == 6:
        return "SE3"
    raise StructureError(f"tangent vectors must have length 3 or 6, got {n}")


def kind_of_matrix(m: NDArray) -> Kind:
    if m.shape[-2:] == (3, 3):
        return "SO3"
    if m.shape[-2:] == (4, 4):
        return "SE3"
    raise StructureError(f"group matrices must be 3x3 or 4x4, got {m.shape[-2:]}")


def _mat(g) -> NDArray:
    if isinstance(g, GroupElement):
        return g.matrix
    return np.asarray(g, dtype=float)


# ---------------------------------------------------------------------------
# angle-dependent coefficients


def _series_or_closed(theta: NDArray, series, closed) -> NDArray:
    theta = np.asarray(theta, dtype=float)
    small = theta < SERIES_THRESHOLD
    safe = np.where(small, 1.0, theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = closed(safe)
    return np.where(small, series(theta), out)


def _sinc(t):
    # sin(t) / t
    return _series_or_closed(
        t,
        lambda x: 1 - x**2 / 6 + x**4 / 120 - x**6 / 5040 + x**8 / 362880,
        lambda x: np.sin(x) / x,
    )


def _cosc(t):
    # (1 - cos t) / t^2
    return _series_or_closed(
        t,
        lambda x: 0.5 - x**2 / 24 + x**4 / 720 - x**6 / 40320 + x**8 / 3628800,
        lambda x: (1 - np.cos(x)) / x**2,
    )


def _sinc3(t):
    # (t - sin t) / t^3
    return _series_or_closed(
        t,
        lambda x: 1 / 6 - x**2 / 120 + x**4 / 5040 - x**6 / 362880 + x**8 / 39916800,
        lambda x: (x - np.sin(x)) / x**3,
    )


def _coef4(t):
    # (t^2 + 2 cos t - 2) / (2 t^4)
    return _series_or_closed(
        t,
        lambda x: 1 / 24 - x**2 / 720 + x**4 / 40320 - x**6 / 3628800 + x**8 / 479001600,
        lambda x: (x**2 + 2 * np.cos(x) - 2) / (2 * x**4),
    )


def _coef5(t):
    # (2t - 3 sin t + t cos t) / (2 t^5)
    return _series_or_closed(
        t,
        lambda x: 1 / 120 - x**2 / 2520 + x**4 / 120960 - x**6 / 9979200 + x**8 / 1245404160,
        lambda x: (2 * x - 3 * np.sin(x) + x * np.cos(x)) / (2 * x**5),
    )


def _jinv_coef(t):
    # 1/t^2 - (1 + cos t) / (2 t sin t)
    return _series_or_closed(
        t,
        lambda x: 1 / 12 + x**2 / 720 + x**4 / 30240 + x**6 / 1209600 + x**8 / 47900160,
        lambda x: 1 / x**2 - (1 + np.cos(x)) / (2 * x * np.sin(x)),
    )


def _half_theta_over_sin(t):
    # t / (2 sin t)
    return _series_or_closed(
        t,
        lambda x: 0.5 + x**2 / 12 + 7 * x**4 / 720 + 31 * x**6 / 30240 + 127 * x**8 / 1209600,
        lambda x: x / (2 * np.sin(x)),
    )


def _check_branch(theta: NDArray, what: str) -> None:
    bad = theta > np.pi - BRANCH_MARGIN
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise BranchError(
            f"{what}: rotation angle within {BRANCH_MARGIN:g} of pi", index=idx
        )


# ---------------------------------------------------------------------------
# hat / vee


def _skew(w: NDArray) -> NDArray:
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def hat(v: ArrayLike) -> NDArray:
    """Map tangent coordinates to the Lie algebra (skew 3x3 or 4x4 twist)."""
    v = np.asarray(v, dtype=float)
    if kind_of_tangent(v) == "SO3":
        return _skew(v)
    out = np.zeros(v.shape[:-1] + (4, 4))
    out[..., :3, :3] = _skew(v[..., :3])
    out[..., :3, 3] = v[..., 3:]
    return out


def vee(m: ArrayLike) -> NDArray:
    """Inverse of :func:`hat`; raises StructureError for non-algebra input."""
    m = np.asarray(m, dtype=float)
    kind = kind_of_matrix(m)
    w = m[..., :3, :3]
    if np.any(np.abs(w + np.swapaxes(w, -1, -2)) > SKEW_TOL):
        raise StructureError("rotation block is not skew-symmetric")
    omega = np.stack([w[..., 2, 1], w[..., 0, 2], w[..., 1, 0]], axis=-1)
    if kind == "SO3":
        return omega
    if np.any(np.abs(m[..., 3, :]) > SKEW_TOL):
        raise StructureError("bottom row of an se(3) matrix must be zero")
    return np.concatenate([omega, m[..., :3, 3]], axis=-1)


def ad_matrix(v: ArrayLike) -> NDArray:
    """Algebra adjoint ``ad_v`` (the Lie bracket ``[v, .]`` as a matrix)."""
    v = np.asarray(v, dtype=float)
    if kind_of_tangent(v) == "SO3":
        return _skew(v)
    out = np.zeros(v.shape[:-1] + (6, 6))
    wh = _skew(v[..., :3])
    out[..., :3, :3] = wh
    out[..., 3:, 3:] = wh
    out[..., 3:, :3] = _skew(v[..., 3:])
    return out


# ---------------------------------------------------------------------------
# SO(3) building blocks


def _so3_left_jacobian(w: NDArray) -> NDArray:
    theta = np.linalg.norm(w, axis=-1)
    wh = _skew(w)
    eye = np.broadcast_to(np.eye(3), wh.shape)
    return eye + _cosc(theta)[..., None, None] * wh + _sinc3(theta)[..., None, None] * (wh @ wh)


def _so3_left_jacobian_inv(w: NDArray) -> NDArray:
    theta = np.linalg.norm(w, axis=-1)
    wh = _skew(w)
    eye = np.broadcast_to(np.eye(3), wh.shape)
    return eye - 0.5 * wh + _jinv_coef(theta)[..., None, None] * (wh @ wh)


def _so3_exp(w: NDArray) -> NDArray:
    theta = np.linalg.norm(w, axis=-1)
    wh = _skew(w)
    eye = np.broadcast_to(np.eye(3), wh.shape)
    return eye + _sinc(theta)[..., None, None] * wh + _cosc(theta)[..., None, None] * (wh @ wh)


def _so3_log(R: NDArray) -> NDArray:
    raw = 0.5 * np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    s = np.linalg.norm(raw, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    _check_branch(theta, "log_map")
    return (2.0 * _half_theta_over_sin(theta))[..., None] * raw


def _se3_q(w: NDArray, nu: NDArray) -> NDArray:
    """Off-diagonal block of the SE(3) left Jacobian."""
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    W = _skew(w)
    V = _skew(nu)
    WV = W @ V
    VW = V @ W
    WVW = WV @ W
    return (
        0.5 * V
        + _sinc3(theta) * (WV + VW + WVW)
        + _coef4(theta) * (W @ WV + VW @ W - 3.0 * WVW)
        + _coef5(theta) * (WVW @ W + W @ WVW)
    )


# ---------------------------------------------------------------------------
# exp / log / group operations


def exp_map(v: ArrayLike) -> NDArray:
    """Exponential map from tangent coordinates to a group matrix."""
    v = np.asarray(v, dtype=float)
    if kind_of_tangent(v) == "SO3":
        return _so3_exp(v)
    w, nu = v[..., :3], v[..., 3:]
    out = np.zeros(v.shape[:-1] + (4, 4))
    out[..., :3, :3] = _so3_exp(w)
    out[..., :3, 3] = np.einsum("...ij,...j->...i", _so3_left_jacobian(w), nu)
    out[..., 3, 3] = 1.0
    return out


def log_map(g) -> NDArray:
    """Logarithm (principal branch).  Raises BranchError near angle pi."""
    g = _mat(g)
    if kind_of_matrix(g) == "SO3":
        return _so3_log(g)
    w = _so3_log(g[..., :3, :3])
    nu = np.einsum("...ij,...j->...i", _so3_left_jacobian_inv(w), g[..., :3, 3])
    return np.concatenate([w, nu], axis=-1)


def inverse(g) -> NDArray:
    g = _mat(g)
    if kind_of_matrix(g) == "SO3":
        return np.swapaxes(g, -1, -2).copy()
    out = np.zeros_like(g)
    Rt = np.swapaxes(g[..., :3, :3], -1, -2)
    out[..., :3, :3] = Rt
    out[..., :3, 3] = -np.einsum("...ij,...j->...i", Rt, g[..., :3, 3])
    out[..., 3, 3] = 1.0
    return out


def compose(g1, g2) -> NDArray:
    a, b = _mat(g1), _mat(g2)
    if a.shape[-2:] != b.shape[-2:]:
        raise KindMismatch(f"cannot compose {a.shape[-2:]} with {b.shape[-2:]}")
    return a @ b


def identity(kind: Kind) -> NDArray:
    return np.eye(matrix_dim(kind))


def adjoint_matrix(g) -> NDArray:
    """Group adjoint in (omega, nu) coordinates: ``[[R, 0], [t^ R, R]]``."""
    g = _mat(g)
    if kind_of_matrix(g) == "SO3":
        return g.copy()
    R = g[..., :3, :3]
    out = np.zeros(g.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., 3:, :3] = _skew(g[..., :3, 3]) @ R
    return out


def dexp(v: ArrayLike) -> NDArray:
    """Trivialised tangent of exp (left Jacobian).

    ``exp(v + d) ~= exp(dexp(v) @ d) @ exp(v)`` to first order in ``d``.
    """
    v = np.asarray(v, dtype=float)
    if kind_of_tangent(v) == "SO3":
        _check_branch(np.linalg.norm(v, axis=-1), "dexp")
        return _so3_left_jacobian(v)
    w, nu = v[..., :3], v[..., 3:]
    _check_branch(np.linalg.norm(w, axis=-1), "dexp")
    J = _so3_left_jacobian(w)
    out = np.zeros(v.shape[:-1] + (6, 6))
    out[..., :3, :3] = J
    out[..., 3:, 3:] = J
    out[..., 3:, :3] = _se3_q(w, nu)
    return out


def dexp_inv(v: ArrayLike) -> NDArray:
    """Inverse of :func:`dexp`, in closed form."""
    v = np.asarray(v, dtype=float)
    if kind_of_tangent(v) == "SO3":
        _check_branch(np.linalg.norm(v, axis=-1), "dexp_inv")
        return _so3_left_jacobian_inv(v)
    w, nu = v[..., :3], v[..., 3:]
    _check_branch(np.linalg.norm(w, axis=-1), "dexp_inv")
    Ji = _so3_left_jacobian_inv(w)
    out = np.zeros(v.shape[:-1] + (6, 6))
    out[..., :3, :3] = Ji
    out[..., 3:, 3:] = Ji
    out[..., 3:, :3] = -Ji @ _se3_q(w, nu) @ Ji
    return out


# ---------------------------------------------------------------------------
# quadratic function on the group


def relative_log(g1, g2) -> NDArray:
    """``log(g2^-1 g1)``, broadcasting over leading axes."""
    return log_map(inverse(g2) @ _mat(g1))


def lie_quadratic(g1, g2, M: ArrayLike) -> NDArray:
    """``0.5 * |log(g2^-1 g1)|_M^2``."""
    xi = relative_log(g1, g2)
    M = np.asarray(M, dtype=float)
    return 0.5 * np.einsum("...i,ij,...j->...", xi, M, xi)


def lie_quadratic_d1(g1, g2, M: ArrayLike) -> NDArray:
    """Left-trivialised derivative of :func:`lie_quadratic` in ``g1``."""
    xi = relative_log(g1, g2)
    M = np.asarray(M, dtype=float)
    return np.einsum("...ji,jk,...k->...i", dexp_inv(-xi), M, xi)


def lie_quadratic_d2(g1, g2, M: ArrayLike) -> NDArray:
    """Left-trivialised derivative of :func:`lie_quadratic` in ``g2``."""
    d1 = lie_quadratic_d1(g1, g2, M)
    Ad = adjoint_matrix(inverse(g1) @ _mat(g2))
    return -np.einsum("...ji,...j->...i", Ad, d1)


# ---------------------------------------------------------------------------
# validated element type


def project_to_group(m: ArrayLike) -> NDArray:
    """Nearest valid group matrix (polar projection of the rotation block)."""
    m = np.array(m, dtype=float)
    kind = kind_of_matrix(m)
    R = m[..., :3, :3]
    U, _, Vt = np.linalg.svd(R)
    D = np.ones(R.shape[:-2] + (3,))
    D[..., 2] = np.sign(np.linalg.det(U @ Vt))
    Rp = (U * D[..., None, :]) @ Vt
    if kind == "SO3":
        return Rp
    out = np.zeros_like(m)
    out[..., :3, :3] = Rp
    out[..., :3, 3] = m[..., :3, 3]
    out[..., 3, 3] = 1.0
    return out


def check_group(m: NDArray, tol: float = ORTHO_TOL) -> None:
    """Raise StructureError unless ``m`` (possibly batched) is a valid element."""
    kind = kind_of_matrix(m)
    if not np.all(np.isfinite(m)):
        raise StructureError("group matrix has non-finite entries")
    R = m[..., :3, :3]
    err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max(initial=0.0)
    if err >= tol:
        raise StructureError(f"rotation block not orthogonal (error {err:.3g})")
    det = np.linalg.det(R)
    if np.any(np.abs(det - 1.0) > tol):
        raise StructureError("rotation block determinant is not 1")
    if kind == "SE3" and np.any(m[..., 3, :] != np.array([0.0, 0.0, 0.0, 1.0])):
        raise StructureError("SE3 bottom row must be (0, 0, 0, 1)")


@dataclass(frozen=True)
class GroupElement:
    """An SO(3) or SE(3) element with checked invariants."""

    kind: Kind
    matrix: NDArray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if kind_of_matrix(m) != self.kind or m.ndim != 2:
            raise StructureError(f"matrix shape {m.shape} does not match kind {self.kind}")
        check_group(m)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_matrix(cls, m: ArrayLike, project: bool = False) -> "GroupElement":
        m = np.asarray(m, dtype=float)
        if project:
            m = project_to_group(m)
        return cls(kind_of_matrix(m), m)

    @classmethod
    def identity(cls, kind: Kind) -> "GroupElement":
        return cls(kind, identity(kind))

    @classmethod
    def exp(cls, v: ArrayLike) -> "GroupElement":
        v = np.asarray(v, dtype=float)
        return cls(kind_of_tangent(v), exp_map(v))

    def log(self) -> NDArray:
        return log_map(self.matrix)

    def inverse(self) -> "GroupElement":
        return GroupElement(self.kind, inverse(self.matrix))

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        if not isinstance(other, GroupElement):
            return NotImplemented
        if other.kind != self.kind:
            raise KindMismatch(f"cannot compose {self.kind} with {other.kind}")
        return GroupElement(self.kind, self.matrix @ other.matrix)

    def adjoint(self) -> NDArray:
        return adjoint_matrix(self.matrix)

    @property
    def rotation(self) -> NDArray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> NDArray:
        if self.kind != "SE3":
            raise KindMismatch("SO3 elements have no translation")
        return self.matrix[:3, 3]
