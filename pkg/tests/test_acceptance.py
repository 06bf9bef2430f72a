"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances are the stated ones. Criteria that are not met are marked as
expected failures with the analysis recorded in the project notes; their
checks are not loosened.
"""

import json
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from kergodic import io as kio
from kergodic import liegroups as lg
from kergodic.bench import TrialSpec, run_trials, scaling_sweep
from kergodic.distributions import (
    GaussianMixture,
    LieGaussianComponent,
    LieGaussianMixture,
    gmm_sample,
    lie_gaussian_grad,
    lie_gaussian_pdf,
    lie_gmm_fit_em,
    lie_gmm_sample,
    random_benchmark_gmm,
)
from kergodic.dynamics import FirstOrder, LieKinematic, linearize, rollout
from kergodic.fourier import FourierBasis, distribution_coeffs, fourier_metric
from kergodic.metric import (
    _kernel_grad_rows,
    _self_similarity,
    ergodic_grad,
    ergodic_metric,
    lie_ergodic_grad,
    lie_ergodic_metric,
)
from kergodic.planner import ErgodicProblem, bootstrap, cost_gradients, optimize, solve_lqr_subproblem

from conftest import dense_qp, record_criterion, rel_err, trivialized_diff


def _fd_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = eps
        g[idx] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def test_c01_euclidean_gradient_fidelity():
    worst = 0.0
    t0 = time.perf_counter()
    for seed in range(10):
        rng = np.random.default_rng(seed)
        p = random_benchmark_gmm(2, rng)
        x = rng.uniform(size=(50, 2))
        th = np.full(2, 1e-3)
        g = ergodic_grad(x, p, th)
        fd = _fd_grad(lambda y: ergodic_metric(y, p, th), x)
        worst = max(worst, rel_err(g, fd))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-5 and elapsed < 1.0
    record_criterion(1, "Euclidean gradient", ok, f"max rel err {worst:.2e} (< 1e-5), {elapsed:.2f} s (< 1 s)")
    assert ok


def _se3_target(rng):
    means = [lg.exp_map(np.concatenate([0.3 * rng.normal(size=3), 0.3 * rng.normal(size=3)])) for _ in range(2)]
    covs = []
    for _ in range(2):
        A = rng.normal(size=(6, 6))
        covs.append(0.02 * A @ A.T / 6 + 0.02 * np.eye(6))
    return LieGaussianMixture([0.5, 0.5], means, covs)


def test_c02_lie_gradient_fidelity():
    worst_metric = worst_pdf = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        p = _se3_target(rng)
        th = np.full(6, 0.05)
        g = lie_gmm_sample(p, rng, 30)
        grad = lie_ergodic_grad(g, p, th)
        fd = np.zeros_like(grad)
        for i in range(30):
            def f(h, i=i):
                gg = g.copy()
                gg[i] = h
                return lie_ergodic_metric(gg, p, th)

            fd[i] = trivialized_diff(f, g[i])
        worst_metric = max(worst_metric, rel_err(grad, fd))
        c = LieGaussianComponent(p.means[0], p.covs[0])
        for h in g[:5]:
            fdp = trivialized_diff(lambda q: float(lie_gaussian_pdf(c, q)), h)
            worst_pdf = max(worst_pdf, rel_err(lie_gaussian_grad(c, h), fdp))
    ok = worst_metric < 1e-4 and worst_pdf < 1e-4
    record_criterion(2, "Lie gradient", ok, f"metric {worst_metric:.2e}, density {worst_pdf:.2e} (< 1e-4)")
    assert ok


def test_c03_lie_identities():
    rng = np.random.default_rng(0)
    rt = hom = prod = quad = 0.0
    M = np.diag(rng.uniform(0.5, 2.0, 6))
    for _ in range(500):
        v = rng.normal(size=6)
        v[:3] *= rng.uniform(0, 3.0) / np.linalg.norm(v[:3])
        g = lg.exp_map(v)
        rt = max(rt, np.abs(lg.exp_map(lg.log_map(g)) - g).max(), np.abs(lg.log_map(g) - v).max())
        h = lg.exp_map(rng.normal(size=6))
        hom = max(hom, np.abs(lg.adjoint_matrix(g @ h) - lg.adjoint_matrix(g) @ lg.adjoint_matrix(h)).max())
        prod = max(prod, np.abs(lg.dexp_inv(v) @ lg.dexp(v) - np.eye(6)).max())
    for _ in range(20):
        g1 = lg.exp_map(0.5 * rng.normal(size=6))
        g2 = lg.exp_map(0.5 * rng.normal(size=6))
        d1 = trivialized_diff(lambda h: lg.lie_quadratic(h, g2, M), g1)
        d2 = trivialized_diff(lambda h: lg.lie_quadratic(g1, h, M), g2)
        quad = max(quad, rel_err(lg.lie_quadratic_d1(g1, g2, M), d1), rel_err(lg.lie_quadratic_d2(g1, g2, M), d2))
    ok = rt < 1e-9 and hom < 1e-9 and prod < 1e-8 and quad < 1e-5
    record_criterion(
        3, "Lie identities", ok,
        f"roundtrip {rt:.1e}, Ad hom {hom:.1e}, dexp_inv*dexp {prod:.1e}, quadratic FD {quad:.1e}",
    )
    assert ok


@pytest.fixture(scope="module")
def benchmark_trials():
    """The 20 seeded 2D first-order trials shared by criteria 4 and 5."""
    specs = [TrialSpec(seed=s, dim=2, order=1, T=200, dt=0.1) for s in range(20)]
    return run_trials(specs, timing=True)


def test_c04_descent(benchmark_trials):
    worst_increase = -np.inf
    for rec in benchmark_trials:
        J = np.array(rec.objective_curve)
        worst_increase = max(worst_increase, float(np.max(np.diff(J))))
    descent_ok = worst_increase <= 1e-12

    worst_qp = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = random_benchmark_gmm(2, rng)
        prob = ErgodicProblem.with_defaults(FirstOrder(2), p, 1e-3, rng.uniform(size=2), T=5, dt=0.1)
        traj = rollout(prob.model, prob.s0, 0.5 * rng.normal(size=(5, 2)), prob.dt)
        a, b = cost_gradients(prob, traj)
        A, B = linearize(prob.model, traj)
        d = solve_lqr_subproblem(A, B, a, b, prob.Q, prob.R, prob.dt)
        v, _ = dense_qp(A, B, a, b, prob.Q, prob.R, prob.dt)
        worst_qp = max(worst_qp, rel_err(d.v, v))
    ok = descent_ok and worst_qp < 1e-8
    record_criterion(
        4, "descent", ok,
        f"max J(k+1)-J(k) {worst_increase:.2e} (<= 1e-12) over 20 runs, QP rel err {worst_qp:.1e} (< 1e-8)",
    )
    assert ok


@pytest.mark.xfail(
    strict=False,
    reason="kernel-optimal trajectories plateau near 1e-2 to 4e-2 in the K=10 Fourier metric; "
    "analysis in the decisions ledger",
)
def test_c05_ergodicity_level(benchmark_trials):
    vals = np.array([r.final_fourier_metric for r in benchmark_trials], dtype=float)
    hit = float(np.mean(vals <= 5e-3))
    ok = hit >= 0.9
    record_criterion(
        5, "Fourier level", ok,
        f"{int(np.sum(vals <= 5e-3))}/20 trials <= 5e-3 (need 18), median {np.median(vals):.2e}, "
        f"min {vals.min():.2e}, mean time {np.mean([r.time_total_s for r in benchmark_trials]):.1f} s/trial",
    )
    assert ok


def test_c06_scaling():
    table = scaling_sweep(dims=(2, 3, 4, 5, 6), trials_per_dim=5, order=1, T=200, repeats=7)
    ratio = table.ratio(6, 2)
    ok = ratio <= 4.0
    times = ", ".join(f"{r.dim}D {1e3 * r.median_time_s:.2f} ms" for r in table.rows)
    record_criterion(6, "scaling", ok, f"t(6D)/t(2D) = {ratio:.2f} (<= 4); {times}; linear fit r2 {table.r2:.3f}")
    assert ok


def test_c07_statistical_consistency():
    Ns = (16, 64, 256, 1024)
    kern = np.zeros((10, len(Ns)))
    four = np.zeros((10, len(Ns)))
    basis = FourierBasis.uniform(2, 10)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        p = random_benchmark_gmm(2, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pk = distribution_coeffs(basis, p)
        # the Fourier metric compares against the target restricted to the
        # domain, so its samples are drawn from that restriction
        pool = gmm_sample(p, rng, 20000)
        inside = pool[np.all((pool >= 0) & (pool <= 1), axis=1)]
        for j, N in enumerate(Ns):
            kern[seed, j] = ergodic_metric(gmm_sample(p, rng, N), p, 1e-3)
            four[seed, j] = fourier_metric(basis, inside[:N], pk)
            inside = inside[N:]
    km, fm = kern.mean(axis=0), four.mean(axis=0)
    ok = bool(np.all(np.diff(km) < 0) and np.all(np.diff(fm) < 0))
    record_criterion(
        7, "sample consistency", ok,
        "kernel " + " > ".join(f"{v:.3g}" for v in km) + "; Fourier " + " > ".join(f"{v:.3g}" for v in fm),
    )
    assert ok


@pytest.mark.xfail(
    strict=False,
    reason="with 4 points per bin a one-point boundary excess is already 25%; "
    "analysis in the decisions ledger",
)
def test_c08_uniformity():
    N = 64
    # kernel width fixed in advance: standard deviation half the lattice spacing
    th = np.full(2, 1.0 / (4 * N))

    def energy(y):
        x = y.reshape(-1, 2)
        return _self_similarity(x, th, 1), 2.0 * _kernel_grad_rows(x, th, 1).ravel()

    rng = np.random.default_rng(0)
    best = None
    for _ in range(16):
        res = minimize(energy, rng.uniform(size=2 * N), jac=True, method="L-BFGS-B", bounds=[(0, 1)] * (2 * N))
        if best is None or res.fun < best.fun:
            best = res
    x = best.x.reshape(-1, 2)
    h, _, _ = np.histogram2d(x[:, 0], x[:, 1], bins=4, range=[[0, 1], [0, 1]])
    dev = float(np.abs(h - N / 16).max() / (N / 16))
    ok = dev < 0.25
    record_criterion(
        8, "uniformity", ok,
        f"max bin deviation {100 * dev:.0f}% (< 25%), counts {int(h.min())}..{int(h.max())}, theta {th[0]:.2e}",
    )
    assert ok


def test_c09_lie_euclidean_parity():
    rng = np.random.default_rng(0)
    T, iters = 60, 30
    p3 = GaussianMixture([0.5, 0.5], rng.uniform(0.2, 0.8, (2, 3)), [np.eye(3) * 0.02, np.eye(3) * 0.03])
    th = 5e-3
    rot_var = 1.0 / (2 * np.pi)  # unit normalisation of the frozen rotational block
    means = np.tile(np.eye(4), (2, 1, 1))
    means[:, :3, 3] = p3.means
    covs = np.zeros((2, 6, 6))
    covs[:, :3, :3] = rot_var * np.eye(3)
    covs[:, 3:, 3:] = p3.covs
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pl = LieGaussianMixture(p3.weights, means, covs)
    s0 = np.array([0.5, 0.5, 0.5])
    g0 = np.eye(4)
    g0[:3, 3] = s0
    euc = ErgodicProblem.with_defaults(FirstOrder(3), p3, th, s0, T=T)
    lie = ErgodicProblem.with_defaults(
        LieKinematic("SE3", np.vstack([np.zeros((3, 3)), np.eye(3)])), pl,
        [rot_var] * 3 + [th] * 3, g0, T=T,
    )
    u0 = bootstrap(euc, np.random.default_rng(1))
    te, re = optimize(euc, u0, max_iters=iters)
    tl, rl = optimize(lie, u0, max_iters=iters)
    diff = float(np.abs(tl.states[:, :3, 3] - te.states).max())
    rot = float(np.abs(tl.states[:, :3, :3] - np.eye(3)).max())
    ok = diff < 1e-6 and rot < 1e-6 and re.n_iterations == rl.n_iterations
    record_criterion(
        9, "Lie/Euclidean parity", ok, f"max per-state diff {diff:.1e} (< 1e-6) after {re.n_iterations} iterations"
    )
    assert ok


def test_c10_em_recovery():
    rng = np.random.default_rng(0)
    mean = lg.exp_map([0.3, -0.2, 0.5, 0.4, -0.1, 0.8])
    A = rng.normal(size=(6, 6))
    cov = 0.01 * A @ A.T / 6 + 0.005 * np.eye(6)
    p = LieGaussianMixture([1.0], [mean], [cov])
    res = lie_gmm_fit_em(lie_gmm_sample(p, rng, 2000), 1, rng)
    m = res.mixture
    dist = float(np.linalg.norm(lg.log_map(lg.inverse(mean) @ m.means[0])))
    cerr = float(np.linalg.norm(m.covs[0] - cov) / np.linalg.norm(cov))
    mono = bool(np.all(np.diff(res.log_likelihood) >= 0))
    ok = dist < 0.05 and cerr < 0.2 and mono
    record_criterion(10, "EM recovery", ok, f"mean dist {dist:.3f} (< 0.05), cov err {100 * cerr:.1f}% (< 20%), monotone {mono}")
    assert ok


def _cli(args, cwd):
    res = subprocess.run(
        [sys.executable, "-m", "kergodic", "--threads", "1", *args], cwd=cwd, capture_output=True, text=True
    )
    return res.returncode, res.stdout


def _snapshot(path):
    return {str(p.relative_to(path)): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


def test_c11_cli_reproducibility(tmp_path):
    rng = np.random.default_rng(0)
    p = random_benchmark_gmm(2, rng)
    kio.save_mixture(p, tmp_path / "t2.json")
    pl = LieGaussianMixture([1.0], [lg.exp_map([0.1, 0.2, -0.1, 0.3, 0.2, 0.1])], [np.eye(6) * 0.02])
    kio.save_mixture(pl, tmp_path / "se3.json")
    demo = kio.demonstration_from_poses(np.arange(200) * 0.1, lie_gmm_sample(pl, rng, 200))
    kio.write_demonstration(demo, tmp_path / "demo.csv")
    cfg = {
        "version": 1,
        "space": {"type": "euclidean", "dim": 2},
        "target": {"file": "t2.json"},
        "kernel": {"theta": "auto", "grid": {"lo": 1e-4, "hi": 1e-1, "num": 5}},
        "T": 80,
        "seed": 7,
        "max_iters": 10,
        "output": {"trajectory": "traj.csv", "report": "report.jsonl"},
    }
    (tmp_path / "plan.json").write_text(json.dumps(cfg))
    (tmp_path / "bench").mkdir()
    commands = [
        ["plan", "plan.json", "--no-timing"],
        ["tune", "--target", "t2.json", "--seed", "3", "--grid", "1e-4,1e-1,7", "--sweep-csv", "sweep.csv"],
        ["fit", "demo.csv", "--k", "1", "--z-offset", "-0.02", "--seed", "2", "--out", "fit.json"],
        ["metric", "traj.csv", "t2.json", "--theta", "1e-3", "--fourier", "10"],
        ["bench", "--dims", "2,3", "--trials", "2", "--T", "40", "--max-iters", "5", "--out-dir", "bench", "--no-timing"],
    ]
    runs = []
    for _ in range(2):
        outs = []
        for cmd in commands:
            code, out = _cli(cmd, tmp_path)
            outs.append((code, out))
        runs.append((outs, _snapshot(tmp_path)))
    codes = [c for c, _ in runs[0][0]]
    same = runs[0] == runs[1]
    ok = same and all(c == 0 for c in codes)
    record_criterion(
        11, "CLI reproducibility", ok,
        f"{len(commands)} commands run twice, stdout and {len(runs[0][1])} files byte-identical: {same}, exit codes {codes}",
    )
    assert ok
