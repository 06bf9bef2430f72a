"""File formats: mixtures, trajectories, demonstration logs and run configs.

All floats are written with ``repr`` so a write/read/write cycle is a fixed
point. Quaternions are scalar-first ``(qw, qx, qy, qz)``, Hamilton product,
active rotations.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation

from . import liegroups as lg
from .distributions import GaussianMixture, LieGaussianMixture
from .errors import ConfigError
from .metric import EuclideanTrajectory, LieTrajectory

CONFIG_VERSION = 1
QUAT_NORM_TOL = 1e-3
DEMO_HEADER = ["t", "x", "y", "z", "qw", "qx", "qy", "qz"]


def _read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def _write_text(path: str | Path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


# ---------------------------------------------------------------------------
# mixtures

MIXTURE_SCHEMA = {
    "type": "object",
    "required": ["kind", "components"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["euclidean", "SO3", "SE3"]},
        "components": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["weight", "mean", "cov"],
                "additionalProperties": False,
                "properties": {
                    "weight": {"type": "number", "exclusiveMinimum": 0},
                    "mean": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                    "cov": {
                        "type": "array",
                        "items": {"type": "array", "items": {"type": "number"}},
                    },
                },
            },
        },
    },
}


def mixture_to_dict(p: GaussianMixture | LieGaussianMixture) -> dict:
    if isinstance(p, LieGaussianMixture):
        kind = p.kind
        means = [m.reshape(-1).tolist() for m in p.means]
    else:
        kind = "euclidean"
        means = [m.tolist() for m in p.means]
    return {
        "kind": kind,
        "components": [
            {"weight": float(w), "mean": mu, "cov": c.tolist()}
            for w, mu, c in zip(p.weights, means, p.covs)
        ],
    }


def mixture_from_dict(d: dict) -> GaussianMixture | LieGaussianMixture:
    try:
        jsonschema.validate(d, MIXTURE_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid mixture: {exc.message}") from exc
    comps = d["components"]
    weights = [c["weight"] for c in comps]
    try:
        covs = np.array([c["cov"] for c in comps], dtype=float)
        if d["kind"] == "euclidean":
            return GaussianMixture(weights, np.array([c["mean"] for c in comps], float), covs)
        m = lg.matrix_dim(d["kind"])
        means = []
        for i, c in enumerate(comps):
            if len(c["mean"]) != m * m:
                raise ConfigError(f"component {i}: a {d['kind']} mean needs {m * m} row-major entries")
            means.append(np.array(c["mean"], float).reshape(m, m))
        return LieGaussianMixture(weights, np.stack(means), covs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid mixture: {exc}") from exc


def save_mixture(p, path: str | Path) -> None:
    _write_text(path, json.dumps(mixture_to_dict(p), indent=2) + "\n")


def load_mixture(path: str | Path):
    return mixture_from_dict(_read_json(path))


# ---------------------------------------------------------------------------
# trajectories


def trajectory_header(traj, n_controls: int | None = None) -> list[str]:
    c = traj.controls.shape[1] if n_controls is None else n_controls
    if isinstance(traj, LieTrajectory):
        m = traj.states.shape[-1]
        pose = [f"g{i + 1}{j + 1}" for i in range(m) for j in range(m)]
        return ["t"] + pose + [f"xi{i + 1}" for i in range(c)]
    n = traj.states.shape[1]
    return ["t"] + [f"s{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(c)]


def save_trajectory(traj, path: str | Path, twists: NDArray | None = None) -> None:
    """Trajectory CSV; on groups the control columns hold body twists."""
    controls = traj.controls if twists is None else np.asarray(twists, dtype=float)
    rows = []
    for k in range(traj.horizon):
        state = traj.states[k].reshape(-1)
        rows.append([k * traj.dt, *state, *controls[k]])
    header = trajectory_header(traj, controls.shape[1])
    lines = [",".join(header)] + [",".join(repr(float(v)) for v in r) for r in rows]
    _write_text(path, "\n".join(lines) + "\n")


def load_trajectory(path: str | Path):
    """Read a trajectory CSV written by :func:`save_trajectory`."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    if len(rows) < 3:
        raise ConfigError(f"{path}: a trajectory needs a header and at least two rows")
    header = rows[0]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from exc
    if data.shape[1] != len(header) or header[0] != "t":
        raise ConfigError(f"{path}: header does not match the data columns")
    t = data[:, 0]
    dt = float(t[1] - t[0])
    if header[1] == "g11":
        m = 4 if "g44" in header else 3
        states = data[:, 1 : 1 + m * m].reshape(-1, m, m)
        return LieTrajectory(states, data[:, 1 + m * m :], dt)
    n = sum(1 for h in header if h.startswith("s"))
    return EuclideanTrajectory(data[:, 1 : 1 + n], data[:, 1 + n :], dt)


def load_points(path: str | Path) -> NDArray:
    """Sample file: CSV with a header row, one point per row."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    try:
        pts = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric entry ({exc})") from exc
    if pts.ndim != 2 or len(pts) == 0:
        raise ConfigError(f"{path}: no samples")
    return pts


def save_points(points: ArrayLike, path: str | Path) -> None:
    pts = np.asarray(points, dtype=float)
    lines = [",".join(f"x{i + 1}" for i in range(pts.shape[1]))]
    lines += [",".join(repr(float(v)) for v in r) for r in pts]
    _write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# demonstration logs


@dataclass(frozen=True, eq=False)
class DemonstrationLog:
    """Timestamped SE(3) poses; quaternions are unit and scalar-first."""

    t: NDArray
    positions: NDArray
    quaternions: NDArray

    def poses(self) -> NDArray:
        """SE(3) matrices ``(N, 4, 4)``."""
        R = Rotation.from_quat(self.quaternions, scalar_first=True).as_matrix()
        g = np.zeros((len(self.t), 4, 4))
        g[:, :3, :3] = R
        g[:, :3, 3] = self.positions
        g[:, 3, 3] = 1.0
        return g


def read_demonstration(path: str | Path) -> DemonstrationLog:
    """Parse a ``t,x,y,z,qw,qx,qy,qz`` CSV log.

    Rows are validated individually; errors name the 1-based file line.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    if not rows or [h.strip() for h in rows[0]] != DEMO_HEADER:
        raise ConfigError(f"{path}: line 1: header must be {','.join(DEMO_HEADER)}")
    vals = []
    for line, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(DEMO_HEADER):
            raise ConfigError(f"{path}: line {line}: expected {len(DEMO_HEADER)} fields, got {len(row)}")
        try:
            v = [float(x) for x in row]
        except ValueError as exc:
            raise ConfigError(f"{path}: line {line}: {exc}") from exc
        if not np.all(np.isfinite(v)):
            raise ConfigError(f"{path}: line {line}: non-finite value")
        qn = np.linalg.norm(v[4:])
        if abs(qn - 1.0) > QUAT_NORM_TOL:
            raise ConfigError(f"{path}: line {line}: quaternion norm {qn:.6g} is not within {QUAT_NORM_TOL} of 1")
        if vals and v[0] <= vals[-1][0]:
            raise ConfigError(f"{path}: line {line}: timestamps must be strictly increasing")
        vals.append(v)
    if not vals:
        raise ConfigError(f"{path}: no data rows")
    a = np.array(vals)
    q = a[:, 4:] / np.linalg.norm(a[:, 4:], axis=1, keepdims=True)
    return DemonstrationLog(a[:, 0], a[:, 1:4], q)


def write_demonstration(log: DemonstrationLog, path: str | Path) -> None:
    lines = [",".join(DEMO_HEADER)]
    for t, x, q in zip(log.t, log.positions, log.quaternions):
        lines.append(",".join(repr(float(v)) for v in (t, *x, *q)))
    _write_text(path, "\n".join(lines) + "\n")


def demonstration_from_poses(t: ArrayLike, poses: ArrayLike) -> DemonstrationLog:
    """Build a log from SE(3) matrices (the converter entry point).

    External recordings can be adapted by loading them into ``(N, 4, 4)``
    pose matrices with increasing timestamps and writing the result with
    :func:`write_demonstration`.
    """
    g = np.asarray(poses, dtype=float)
    q = Rotation.from_matrix(g[:, :3, :3]).as_quat(scalar_first=True)
    return DemonstrationLog(np.asarray(t, dtype=float), g[:, :3, 3].copy(), q)


# ---------------------------------------------------------------------------
# run configuration

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}
_MAT = {"type": "array", "items": _VEC, "minItems": 1}
_WEIGHT = {"oneOf": [_POS, _VEC, _MAT]}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "space", "target", "kernel", "output"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "space": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["euclidean", "SO3", "SE3"]},
                "dim": {"type": "integer", "minimum": 1, "maximum": 6},
                "lower": _VEC,
                "upper": _VEC,
            },
        },
        "target": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "file": {"type": "string"},
                "inline": {"type": "object"},
            },
            "oneOf": [{"required": ["file"]}, {"required": ["inline"]}],
        },
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "required": ["theta"],
            "properties": {
                "theta": {"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}, {"const": "auto"}]},
                "grid": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["lo", "hi", "num"],
                    "properties": {"lo": _POS, "hi": _POS, "num": {"type": "integer", "minimum": 1}},
                },
                "samples": {"type": "integer", "minimum": 2},
            },
        },
        "dynamics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "order": {"enum": [1, 2]},
                "control_basis": _MAT,
            },
        },
        "T": {"type": "integer", "minimum": 2},
        "dt": _POS,
        "Q": _WEIGHT,
        "R": _WEIGHT,
        "control_weight": {"oneOf": [{"type": "number", "minimum": 0}, _VEC, _MAT]},
        "barrier": {"type": "boolean"},
        "barrier_weight": _POS,
        "initial_state": _VEC,
        "seed": {"type": "integer", "minimum": 0},
        "max_iters": {"type": "integer", "minimum": 0},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "required": ["trajectory", "report"],
            "properties": {"trajectory": {"type": "string"}, "report": {"type": "string"}},
        },
    },
}


def validate_config(cfg: Any) -> dict:
    """Schema-check a run config; raises :class:`ConfigError`."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc
    return cfg


def load_config(path: str | Path) -> dict:
    return validate_config(_read_json(path))


def weight_matrix(spec, n: int, name: str) -> NDArray:
    """Scalar, diagonal vector or full matrix to an ``n x n`` matrix."""
    a = np.asarray(spec, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1:
        if a.shape != (n,):
            raise ConfigError(f"{name} diagonal must have {n} entries")
        return np.diag(a)
    if a.shape != (n, n):
        raise ConfigError(f"{name} must be {n}x{n}")
    return a
