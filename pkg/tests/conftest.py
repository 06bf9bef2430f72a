import numpy as np
import pytest

from kergodic import liegroups as lg


def central_diff(f, x, eps=1e-6):
    """Central finite-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def trivialized_diff(f, g, eps=1e-6):
    """FD of ``f(g exp(eps e_i))`` for each tangent direction."""
    d = lg.tangent_dim(lg.kind_of_matrix(g))
    out = np.zeros(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = eps
        out[i] = (f(g @ lg.exp_map(e)) - f(g @ lg.exp_map(-e))) / (2 * eps)
    return out


def expm_series(a, terms=30):
    """Truncated matrix exponential, an oracle independent of the closed forms."""
    out = np.eye(len(a))
    term = np.eye(len(a))
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    return out


def random_tangent(rng, kind, scale=1.0):
    return scale * rng.normal(size=lg.tangent_dim(kind))


def random_se3(rng, rot=1.0, trans=1.0):
    w = rng.normal(size=3)
    w *= rot * rng.uniform() / np.linalg.norm(w) * 2.5
    return lg.exp_map(np.concatenate([w, trans * rng.normal(size=3)]))


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def dense_qp(A, B, a, b, Q, R, dt):
    """Solve the LQR subproblem as one dense quadratic program."""
    T, n, m = B.shape
    M = np.zeros((T * n, T * m))  # z = M v
    for k in range(1, T):
        for j in range(k):
            Phi = np.eye(n)
            for i in range(j + 1, k):
                Phi = A[i] @ Phi
            M[k * n : (k + 1) * n, j * m : (j + 1) * m] = Phi @ B[j]
    Qb = np.kron(np.eye(T), Q)
    Rb = np.kron(np.eye(T), R)
    H = 2 * dt * (M.T @ Qb @ M + Rb)
    g = dt * (M.T @ a.ravel() + b.ravel())
    v = -np.linalg.solve(H, g)
    return v.reshape(T, m), (M @ v).reshape(T, n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    """Print and remember one pass/fail line for the acceptance summary."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
