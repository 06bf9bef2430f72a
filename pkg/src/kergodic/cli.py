"""Command-line entry point: plan, tune, fit, metric and bench.

Exit codes: 0 success, 1 configuration or input error, 2 solver failure.
Summaries are printed to stdout as JSON; diagnostics go to stderr. Nothing
is written when the inputs fail validation.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from . import io as kio
from . import liegroups as lg
from .distributions import GaussianMixture, gmm_sample, lie_gmm_fit_em
from .dynamics import FirstOrder, LieKinematic, SecondOrder
from .errors import ConfigError, EmptyGrid, KergodicError, QuadratureOverflow
from .fourier import FourierBasis, distribution_coeffs, fourier_metric
from .metric import (
    EuclideanTrajectory,
    ergodic_metric,
    kernel_sweep,
    lie_ergodic_metric,
    log_grid,
    tune_kernel,
)
from .planner import BarrierSpec, ErgodicProblem, SearchSpace, bootstrap, optimize

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2
DEFAULT_GRID = {"lo": 1e-4, "hi": 1e-1, "num": 13}


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _theta_list(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse theta {text!r}") from exc
    if not vals or min(vals) <= 0:
        raise ConfigError("theta entries must be positive")
    return vals


def _select_theta(samples: np.ndarray, target, grid: list[float]) -> tuple[float, list[float]]:
    """Tuned kernel variance and the objective values over ``grid``."""
    theta = tune_kernel(samples, target, grid)
    return theta, kernel_sweep(samples, target, grid).tolist()


# ---------------------------------------------------------------------------
# plan


def _build_problem(cfg: dict, base: Path):
    """Problem, tuning summary and rng from a validated config."""
    rng = np.random.default_rng(cfg.get("seed", 0))
    tgt = cfg["target"]
    if "file" in tgt:
        target = kio.load_mixture(base / tgt["file"])
    else:
        target = kio.mixture_from_dict(tgt["inline"])
    space = cfg["space"]
    T, dt = cfg.get("T", 200), cfg.get("dt", 0.1)
    dyn = cfg.get("dynamics", {})
    tuning = None

    if space["type"] == "euclidean":
        if not isinstance(target, GaussianMixture):
            raise ConfigError("a euclidean space needs a euclidean target")
        n = space.get("dim", target.dim)
        if n != target.dim:
            raise ConfigError(f"space dim {n} does not match target dim {target.dim}")
        lower = space.get("lower", [0.0] * n)
        upper = space.get("upper", [1.0] * n)
        if len(lower) != n or len(upper) != n:
            raise ConfigError("space bounds must have one entry per dimension")
        try:
            domain = SearchSpace(lower, upper)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if "control_basis" in dyn:
            raise ConfigError("control_basis only applies to Lie group spaces")
        order = dyn.get("order", 1)
        model = FirstOrder(n) if order == 1 else SecondOrder(n)
        x0 = np.asarray(cfg.get("initial_state", (domain.lower + domain.upper) / 2), dtype=float)
        if x0.shape == (n,) and order == 2:
            x0 = np.concatenate([x0, np.zeros(n)])
        if x0.shape != (model.state_dim,):
            raise ConfigError(f"initial_state must have {n} (or {model.state_dim}) entries")
        kern = cfg["kernel"]
        if kern["theta"] == "auto":
            g = kern.get("grid", DEFAULT_GRID)
            grid = log_grid(g["lo"], g["hi"], g["num"])
            samples = gmm_sample(target, rng, kern.get("samples", T))
            th, values = _select_theta(samples, target, grid)
            theta = np.full(n, th)
            tuning = {"theta": th, "grid": grid, "objective": values}
        else:
            theta = np.broadcast_to(np.asarray(kern["theta"], dtype=float), (n,)).copy()
        use_barrier = cfg.get("barrier", True)
    else:
        kind = space["type"]
        if getattr(target, "kind", None) != kind:
            raise ConfigError(f"the target is not a {kind} mixture")
        if cfg.get("barrier", False):
            raise ConfigError("the boundary barrier is only available in euclidean spaces")
        if dyn.get("order", 1) != 1:
            raise ConfigError("Lie group dynamics are first order")
        d = lg.tangent_dim(kind)
        model = LieKinematic(kind, dyn.get("control_basis"))
        m = lg.matrix_dim(kind)
        if "initial_state" in cfg:
            if len(cfg["initial_state"]) != m * m:
                raise ConfigError(f"initial_state must hold {m * m} row-major entries")
            x0 = np.asarray(cfg["initial_state"], dtype=float).reshape(m, m)
            try:
                lg.check_group(x0, tol=1e-6)
            except KergodicError as exc:
                raise ConfigError(f"initial_state is not a valid {kind} matrix") from exc
        else:
            x0 = lg.identity(kind)
        th = cfg["kernel"]["theta"]
        if th == "auto":
            raise ConfigError("automatic kernel selection is only available in euclidean spaces")
        theta = np.broadcast_to(np.asarray(th, dtype=float), (d,)).copy()
        domain = None
        use_barrier = False

    ns, nc = model.state_dim, model.control_dim
    kw = {}
    for key, size in (("Q", ns), ("R", nc), ("control_weight", nc)):
        if key in cfg:
            kw[key] = kio.weight_matrix(cfg[key], size, key)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            problem = ErgodicProblem.with_defaults(
                model, target, theta, x0, T=T, dt=dt, domain=domain, barrier=use_barrier, **kw
            )
        if use_barrier and "barrier_weight" in cfg:
            problem = replace(problem, barrier=BarrierSpec(cfg["barrier_weight"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return problem, tuning, rng


def cmd_plan(args) -> int:
    cfg = kio.load_config(args.config)
    base = Path(args.config).resolve().parent
    try:
        problem, tuning, rng = _build_problem(cfg, base)
    except (KergodicError, ValueError) as exc:
        if isinstance(exc, (ConfigError, EmptyGrid)):
            raise
        raise ConfigError(str(exc)) from exc
    out_traj = Path(cfg["output"]["trajectory"])
    out_report = Path(cfg["output"]["report"])
    if not out_traj.is_absolute():
        out_traj = base / out_traj
    if not out_report.is_absolute():
        out_report = base / out_report
    for p in (out_traj, out_report):
        if not p.parent.is_dir():
            raise ConfigError(f"output directory {p.parent} does not exist")

    clock = (lambda: 0.0) if args.no_timing else None
    kw = {} if clock is None else {"clock": clock}
    u0 = bootstrap(problem, rng)
    traj, report = optimize(
        problem, u0, max_iters=cfg.get("max_iters", 100), workers=args.threads, **kw
    )
    if tuning is not None:
        report.metadata["kernel_tuning"] = tuning
    twists = traj.controls @ problem.model.basis.T if problem.is_lie else None
    kio.save_trajectory(traj, out_traj, twists)
    report.to_jsonl(out_report)
    summary = {
        "status": "failed" if report.failed else "ok",
        "termination": report.termination,
        "iterations": report.n_iterations,
        "objective_initial": report.objectives[0],
        "objective_final": report.objectives[-1],
        "theta": problem.theta.tolist(),
        "trajectory": str(out_traj),
        "report": str(out_report),
    }
    if tuning is not None:
        summary["kernel_tuning"] = tuning
    if problem.is_lie:
        summary["metric_constant"] = "omitted"
    _emit(summary)
    if report.failed:
        print(f"solver failure: {report.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


# ---------------------------------------------------------------------------
# tune


def _parse_grid(args) -> list[float]:
    if args.values is not None:
        return _theta_list(args.values) if args.values.strip() else []
    try:
        lo, hi, num = args.grid.split(",")
        lo, hi, num = float(lo), float(hi), int(num)
    except ValueError as exc:
        raise ConfigError("--grid expects lo,hi,num") from exc
    if num < 1:
        return []
    if not 0 < lo <= hi:
        raise ConfigError("--grid needs 0 < lo <= hi")
    return log_grid(lo, hi, num)


def cmd_tune(args) -> int:
    target = kio.load_mixture(args.target)
    if not isinstance(target, GaussianMixture):
        raise ConfigError("kernel tuning needs a euclidean target")
    grid = _parse_grid(args)
    if not grid:
        raise EmptyGrid("kernel grid is empty")
    if args.samples_file:
        samples = kio.load_points(args.samples_file)
        if samples.shape[1] != target.dim:
            raise ConfigError("sample dimension does not match the target")
    else:
        samples = gmm_sample(target, np.random.default_rng(args.seed), args.samples)
    if len(samples) < 2:
        raise ConfigError("tuning needs at least two samples")
    th, values = _select_theta(samples, target, grid)
    if args.sweep_csv:
        with open(args.sweep_csv, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "objective"])
            for g, v in zip(grid, values):
                w.writerow([repr(g), repr(v)])
    _emit({"theta": th, "grid": grid, "objective": values, "samples": int(len(samples))})
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args) -> int:
    log = kio.read_demonstration(args.demo)
    if args.k < 1:
        raise ConfigError("k must be at least 1")
    poses = log.poses()
    try:
        res = lie_gmm_fit_em(poses, args.k, np.random.default_rng(args.seed))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    mix = res.mixture
    if args.z_offset:
        mix = mix.translate_means([0.0, 0.0, args.z_offset])
    kio.save_mixture(mix, args.out)
    _emit(
        {
            "components": mix.n_components,
            "samples": len(poses),
            "log_likelihood": res.log_likelihood[-1],
            "iterations": len(res.log_likelihood),
            "restarts": res.restarts,
            "converged": res.converged,
            "output": args.out,
        }
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# metric


def cmd_metric(args) -> int:
    traj = kio.load_trajectory(args.trajectory)
    target = kio.load_mixture(args.target)
    theta = _theta_list(args.theta)
    out = {}
    if isinstance(target, GaussianMixture):
        if not isinstance(traj, EuclideanTrajectory) or traj.states.shape[1] < target.dim:
            raise ConfigError("trajectory and target dimensions are incompatible")
        if len(theta) not in (1, target.dim):
            raise ConfigError(f"theta needs 1 or {target.dim} entries")
        theta = np.broadcast_to(np.asarray(theta), (target.dim,))
        out["kernel_metric"] = ergodic_metric(traj, target, theta, workers=args.threads)
        if args.fourier is not None:
            basis = FourierBasis.uniform(target.dim, args.fourier)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    pk = distribution_coeffs(basis, target)
            except QuadratureOverflow as exc:
                raise ConfigError(f"Fourier metric unavailable: {exc}") from exc
            out["fourier_metric"] = fourier_metric(basis, traj, pk)
            out["fourier_K"] = args.fourier
    else:
        if getattr(traj, "kind", None) != target.kind:
            raise ConfigError("trajectory and target groups are incompatible")
        if args.fourier is not None:
            raise ConfigError("the Fourier metric is only defined on euclidean boxes")
        if len(theta) not in (1, target.dim):
            raise ConfigError(f"theta needs 1 or {target.dim} entries")
        theta = np.broadcast_to(np.asarray(theta), (target.dim,))
        out["kernel_metric"] = lie_ergodic_metric(traj, target, theta, workers=args.threads)
        out["metric_constant"] = "omitted"
    _emit(out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    try:
        dims = [int(v) for v in args.dims.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError("--dims expects a comma-separated list of integers") from exc
    theta = args.theta if args.theta == "auto" else float(args.theta)
    try:
        specs = [
            bench.TrialSpec(
                seed=args.seed + i,
                dim=n,
                order=args.order,
                T=args.T,
                theta=theta,
                max_iters=args.max_iters,
            )
            for n in dims
            for i in range(args.trials)
        ]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out_dir)
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    if not specs:
        raise ConfigError("no trials requested")
    records = bench.run_trials(specs, workers=args.threads, timing=not args.no_timing)
    paths = bench.emit_results(records, out, args.prefix)
    summary = {
        "trials": len(records),
        "failed": sum(r.failed for r in records),
        "status_counts": {s: sum(r.status == s for r in records) for s in sorted({r.status for r in records})},
        "files": paths,
    }
    if args.scaling and not args.no_timing:
        table = bench.scaling_sweep(dims, max(3, args.scaling_trials), args.order, args.T, seed=args.seed)
        summary["scaling"] = table.to_dict()
        if 2 in dims and 6 in dims:
            ratio = table.ratio(6, 2)
            summary["scaling"]["ratio_6_2"] = ratio
            summary["scaling"]["ratio_ok"] = ratio <= 4.0
        bench.write_plot_data(table.rows, out / f"{args.prefix}_scaling.csv")
    _emit(summary)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kergodic", description="Kernel ergodic search toolkit")
    ap.add_argument("--threads", type=int, default=1, help="worker cap (1 = bit-reproducible)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="optimise a trajectory from a JSON config")
    p.add_argument("config")
    p.add_argument("--no-timing", action="store_true", help="write zero wall-clock fields")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("tune", help="select the kernel variance on a grid")
    p.add_argument("--target", required=True, help="mixture JSON")
    p.add_argument("--samples-file", help="CSV of samples (header row first)")
    p.add_argument("--samples", type=int, default=200, help="samples to draw when no file is given")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", default="1e-4,1e-1,13", help="log grid lo,hi,num")
    p.add_argument("--values", help="explicit comma-separated candidates")
    p.add_argument("--sweep-csv", help="write theta,objective rows here")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("fit", help="fit an SE(3) mixture to a demonstration log")
    p.add_argument("demo")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--z-offset", type=float, default=0.0, help="added to every mean's z (meters)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("metric", help="evaluate a trajectory against a target")
    p.add_argument("trajectory")
    p.add_argument("target")
    p.add_argument("--theta", required=True, help="variance, or comma-separated per dimension")
    p.add_argument("--fourier", type=int, metavar="K", help="also report the Fourier metric")
    p.set_defaults(func=cmd_metric)

    p = sub.add_parser("bench", help="randomised benchmark trials")
    p.add_argument("--dims", default="2")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--order", type=int, default=1, choices=[1, 2])
    p.add_argument("--T", type=int, default=200)
    p.add_argument("--theta", default=str(bench.DEFAULT_THETA))
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="bench")
    p.add_argument("--scaling", action="store_true", help="also run the dimension timing sweep")
    p.add_argument("--scaling-trials", type=int, default=3)
    p.add_argument("--no-timing", action="store_true", help="write zero wall-clock fields")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, EmptyGrid) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KergodicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
