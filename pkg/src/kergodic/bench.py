"""Randomised benchmark trials, timing sweeps and result tables."""

from __future__ import annotations

import csv
import hashlib
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import linregress

from .distributions import gmm_sample, random_benchmark_gmm
from .dynamics import FirstOrder, SecondOrder
from .fourier import MAX_QUADRATURE_DIM, FourierBasis, distribution_coeffs, fourier_metric
from .metric import ergodic_grad, ergodic_metric, log_grid, tune_kernel
from .planner import ErgodicProblem, SearchSpace, bootstrap, optimize

CSV_HEADER = [
    "seed",
    "dim",
    "order",
    "T",
    "dt",
    "iters",
    "final_kernel_metric",
    "final_fourier_metric",
    "time_total_s",
    "time_per_iter_s",
    "status",
]
PLOT_HEADER = ["dim", "median_time_s", "iqr_s", "trials"]
DEFAULT_THETA = 1e-3
FOURIER_TARGET = 5e-3
AUTO_GRID = (1e-4, 1e-1, 13)


@dataclass(frozen=True)
class TrialSpec:
    """Everything needed to regenerate a trial; the seed drives all randomness.

    ``theta`` is a kernel variance or ``"auto"`` (grid search with the kernel
    tuning objective on ``T`` target samples). ``R_scale`` overrides the
    default control-perturbation weight.
    """

    seed: int
    dim: int = 2
    order: int = 1
    T: int = 200
    dt: float = 0.1
    theta: float | str = DEFAULT_THETA
    K: int = 10
    max_iters: int = 100
    R_scale: float | None = None
    fourier_target: float = FOURIER_TARGET

    def __post_init__(self):
        if not 2 <= self.dim <= 6:
            raise ValueError("dim must be within 2..6")
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if self.theta != "auto" and not float(self.theta) > 0:
            raise ValueError("theta must be positive or 'auto'")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrialRecord:
    spec_hash: str
    seed: int
    dim: int
    order: int
    T: int
    dt: float
    K: int
    theta: list
    iters: int
    final_kernel_metric: float
    final_fourier_metric: float | None
    time_total_s: float
    time_per_iter_s: float
    time_to_target_s: float | None
    objective_curve: list = field(default_factory=list)
    status: str = "ok"
    termination: str = ""
    message: str = ""
    planner: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(**{f.name: d[f.name] for f in fields(cls)})

    @property
    def failed(self) -> bool:
        return self.status not in ("ok", "target_missed")

    def csv_row(self) -> list:
        fm = "" if self.final_fourier_metric is None else repr(self.final_fourier_metric)
        return [
            self.seed,
            self.dim,
            self.order,
            self.T,
            repr(self.dt),
            self.iters,
            repr(self.final_kernel_metric),
            fm,
            repr(self.time_total_s),
            repr(self.time_per_iter_s),
            self.status,
        ]


def make_problem(spec: TrialSpec, rng: np.random.Generator) -> ErgodicProblem:
    """Target, initial state and planner problem for ``spec`` (consumes ``rng``)."""
    n = spec.dim
    target = random_benchmark_gmm(n, rng)
    domain = SearchSpace.unit(n)
    x0 = domain.sample(rng)
    if spec.order == 1:
        model, s0 = FirstOrder(n), x0
    else:
        model, s0 = SecondOrder(n), np.concatenate([x0, np.zeros(n)])
    if spec.theta == "auto":
        samples = gmm_sample(target, rng, spec.T)
        th = tune_kernel(samples, target, log_grid(*AUTO_GRID))
    else:
        th = float(spec.theta)
    overrides = {}
    if spec.R_scale is not None:
        overrides["R"] = spec.R_scale * np.eye(model.control_dim)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ErgodicProblem.with_defaults(
            model, target, np.full(n, th), s0, T=spec.T, dt=spec.dt, domain=domain, **overrides
        )


def _zero_clock() -> float:
    return 0.0


def run_trial(spec: TrialSpec, workers: int = 1, timing: bool = True) -> TrialRecord:
    """Bootstrap and optimise one randomised trial.

    Only the planner (bootstrap plus optimisation) is timed; per-iteration
    Fourier evaluations used for time-to-target are excluded from the clock.
    Planner failures are captured in ``status`` instead of raised. With
    ``timing=False`` every wall-clock field is zero, which makes records
    byte-reproducible.
    """
    clock = time.perf_counter if timing else _zero_clock
    rng = np.random.default_rng(spec.seed)
    problem = make_problem(spec, rng)
    n = spec.dim
    basis = pk = None
    if n <= MAX_QUADRATURE_DIM:
        basis = FourierBasis.uniform(n, spec.K)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            pk = distribution_coeffs(basis, problem.target)

    overhead = 0.0
    hit: list[float] = []
    start = clock()

    def callback(it, traj):
        nonlocal overhead
        if basis is None or hit:
            return
        t_in = clock()
        if fourier_metric(basis, traj, pk) <= spec.fourier_target:
            hit.append(t_in - start - overhead)
        overhead += clock() - t_in

    status, message, termination = "ok", "", ""
    report = None
    try:
        u0 = bootstrap(problem, rng)
        t_opt = clock()
        overhead_before = overhead
        traj, report = optimize(
            problem, u0, max_iters=spec.max_iters, workers=workers, callback=callback, clock=clock
        )
        opt_time = clock() - t_opt - (overhead - overhead_before)
        total = clock() - start - overhead
        termination, message = report.termination, report.message
        if report.failed:
            status = "failed"
    except Exception as exc:  # record and keep the harness going
        total = clock() - start - overhead
        opt_time = total
        status, message, termination = "failed", f"{type(exc).__name__}: {exc}", "exception"
        traj = None

    kernel = fourier = None
    if traj is not None:
        kernel = ergodic_metric(traj, problem.target, problem.theta, scale=problem.target_scale)
        if basis is not None:
            fourier = fourier_metric(basis, traj, pk)
            if status == "ok" and fourier > spec.fourier_target:
                status = "target_missed"
    iters = report.n_iterations if report is not None else 0
    return TrialRecord(
        spec_hash=spec.hash,
        seed=spec.seed,
        dim=n,
        order=spec.order,
        T=spec.T,
        dt=spec.dt,
        K=spec.K,
        theta=problem.theta.tolist(),
        iters=iters,
        final_kernel_metric=float("nan") if kernel is None else float(kernel),
        final_fourier_metric=None if fourier is None else float(fourier),
        time_total_s=float(total),
        time_per_iter_s=float(opt_time / iters) if iters else 0.0,
        time_to_target_s=hit[0] if hit else None,
        objective_curve=[] if report is None else report.objectives,
        status=status,
        termination=termination,
        message=message,
        planner=problem.metadata(),
    )


def run_trials(specs: Sequence[TrialSpec], workers: int = 1, timing: bool = True) -> list[TrialRecord]:
    """Run trials concurrently; output order follows ``specs``."""
    if workers <= 1:
        return [run_trial(s, timing=timing) for s in specs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: run_trial(s, timing=timing), specs))


# ---------------------------------------------------------------------------
# timing sweeps


def time_metric_gradient(x: np.ndarray, target, theta, repeats: int = 5) -> float:
    """Median wall time of one metric plus gradient evaluation."""
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        ergodic_metric(x, target, theta)
        ergodic_grad(x, target, theta)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


@dataclass(frozen=True)
class SweepRow:
    dim: int
    median_time_s: float
    iqr_s: float
    trials: int


@dataclass(frozen=True)
class SweepTable:
    rows: list
    slope: float = float("nan")
    intercept: float = float("nan")
    r2: float = float("nan")

    def ratio(self, hi: int, lo: int) -> float:
        t = {r.dim: r.median_time_s for r in self.rows}
        return t[hi] / t[lo]

    def to_dict(self) -> dict:
        return {
            "rows": [asdict(r) for r in self.rows],
            "slope": self.slope,
            "intercept": self.intercept,
            "r2": self.r2,
        }


def _fit(xs, ys) -> tuple[float, float, float]:
    if len(xs) < 2:
        return float("nan"), float("nan"), float("nan")
    fit = linregress(xs, ys)
    return float(fit.slope), float(fit.intercept), float(fit.rvalue**2)


def scaling_sweep(
    dims: Sequence[int] = (2, 3, 4, 5, 6),
    trials_per_dim: int = 5,
    order: int = 1,
    T: int = 200,
    repeats: int = 5,
    seed: int = 0,
    theta: float = DEFAULT_THETA,
) -> SweepTable:
    """Per-iteration metric+gradient cost against dimension.

    For each trial a benchmark target is drawn and the cost is measured on a
    trajectory of ``T`` states sampled from it; the state dimension seen by
    the metric is the position dimension, so ``order`` only affects labels.
    """
    dims = list(dims)
    if dims and trials_per_dim < 3:
        raise ValueError("trials_per_dim must be at least 3")
    rows = []
    for n in dims:
        times = []
        for t in range(trials_per_dim):
            rng = np.random.default_rng([seed, n, t, order])
            target = random_benchmark_gmm(n, rng)
            x = np.clip(gmm_sample(target, rng, T), 0.0, 1.0)
            times.append(time_metric_gradient(x, target, np.full(n, theta), repeats))
        q1, med, q3 = np.percentile(times, [25, 50, 75])
        rows.append(SweepRow(n, float(med), float(q3 - q1), trials_per_dim))
    slope, intercept, r2 = _fit([r.dim for r in rows], [r.median_time_s for r in rows])
    return SweepTable(rows, slope, intercept, r2)


def horizon_sweep(
    horizons: Sequence[int] = (100, 200, 400), dim: int = 2, repeats: int = 5, seed: int = 0
) -> list[tuple[int, float]]:
    """Metric+gradient time against horizon at fixed dimension."""
    rng = np.random.default_rng([seed, dim])
    target = random_benchmark_gmm(dim, rng)
    out = []
    for T in horizons:
        x = np.clip(gmm_sample(target, rng, T), 0.0, 1.0)
        out.append((int(T), time_metric_gradient(x, target, np.full(dim, DEFAULT_THETA), repeats)))
    return out


def aggregate(records: Sequence[TrialRecord]) -> list[SweepRow]:
    """Median and IQR of per-iteration time grouped by dimension."""
    rows = []
    for n in sorted({r.dim for r in records}):
        t = [r.time_per_iter_s for r in records if r.dim == n]
        q1, med, q3 = np.percentile(t, [25, 50, 75])
        rows.append(SweepRow(n, float(med), float(q3 - q1), len(t)))
    return rows


# ---------------------------------------------------------------------------
# output


def _open(path: Path, mode: str = "w"):
    try:
        return open(path, mode, newline="")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_csv(records: Sequence[TrialRecord], path: str | Path) -> None:
    if not records:
        raise ValueError("no records to write")
    with _open(Path(path)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.csv_row())


def write_jsonl(records: Sequence[TrialRecord], path: str | Path) -> None:
    with _open(Path(path)) as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[TrialRecord]:
    lines = Path(path).read_text().splitlines()
    return [TrialRecord.from_dict(json.loads(line)) for line in lines if line.strip()]


def write_plot_data(rows: Sequence[SweepRow], path: str | Path) -> None:
    with _open(Path(path)) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for r in rows:
            w.writerow([r.dim, repr(r.median_time_s), repr(r.iqr_s), r.trials])


def emit_results(records: Sequence[TrialRecord], out_dir: str | Path, prefix: str = "bench") -> dict:
    """Write summary CSV, full JSONL and per-dimension plot data into ``out_dir``."""
    out = Path(out_dir)
    paths = {
        "csv": out / f"{prefix}.csv",
        "jsonl": out / f"{prefix}.jsonl",
        "plot": out / f"{prefix}_plot.csv",
    }
    write_csv(records, paths["csv"])
    write_jsonl(records, paths["jsonl"])
    write_plot_data(aggregate(records), paths["plot"])
    return {k: str(v) for k, v in paths.items()}
