import csv
import json

import numpy as np
import pytest

from kergodic import bench
from kergodic.bench import (
    CSV_HEADER,
    PLOT_HEADER,
    TrialSpec,
    aggregate,
    emit_results,
    horizon_sweep,
    read_jsonl,
    run_trial,
    run_trials,
    scaling_sweep,
)


@pytest.fixture(scope="module")
def small_records():
    specs = [TrialSpec(seed=s, dim=d, T=40, max_iters=5) for d in (2, 3) for s in range(3)]
    return run_trials(specs, timing=False)


def test_spec_validation():
    with pytest.raises(ValueError):
        TrialSpec(seed=0, dim=7)
    with pytest.raises(ValueError):
        TrialSpec(seed=0, order=3)
    with pytest.raises(ValueError):
        TrialSpec(seed=0, theta=-1.0)
    assert TrialSpec(seed=1).hash == TrialSpec(seed=1).hash != TrialSpec(seed=2).hash


def test_trial_bit_identical():
    spec = TrialSpec(seed=3, T=40, max_iters=6)
    a = run_trial(spec, timing=False).to_dict()
    b = run_trial(spec, timing=False).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert a["time_total_s"] == 0.0


def test_trial_fields():
    rec = run_trial(TrialSpec(seed=0, T=40, max_iters=5))
    assert rec.iters <= 5
    assert rec.status in ("ok", "target_missed")
    assert rec.final_fourier_metric is not None and rec.final_fourier_metric >= 0
    assert rec.time_total_s > 0
    assert len(rec.objective_curve) == rec.iters + 1
    assert rec.termination


def test_high_dim_skips_fourier():
    rec = run_trial(TrialSpec(seed=0, dim=4, T=30, max_iters=2), timing=False)
    assert rec.final_fourier_metric is None


def test_failure_injection_continues():
    specs = [TrialSpec(seed=0, T=40, R_scale=1e9), TrialSpec(seed=1, T=40, max_iters=3)]
    recs = run_trials(specs, timing=False)
    assert recs[0].failed
    assert not recs[1].failed


def test_auto_theta_records_choice():
    rec = run_trial(TrialSpec(seed=0, T=40, theta="auto", max_iters=2), timing=False)
    assert len(rec.theta) == 2
    assert rec.theta[0] in [float(v) for v in np.geomspace(*bench.AUTO_GRID[:2], bench.AUTO_GRID[2])]


def test_emit_roundtrip_and_schema(tmp_path, small_records):
    paths = emit_results(small_records, tmp_path)
    back = read_jsonl(paths["jsonl"])
    assert [r.to_dict() for r in back] == [r.to_dict() for r in small_records]
    with open(paths["csv"]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER
    assert len(rows) == len(small_records) + 1
    with open(paths["plot"]) as fh:
        prow = list(csv.reader(fh))
    assert prow[0] == PLOT_HEADER


def test_aggregate_recomputed_from_jsonl(tmp_path):
    recs = run_trials([TrialSpec(seed=s, T=30, max_iters=3) for s in range(4)])
    emit_results(recs, tmp_path, "agg")
    lines = (tmp_path / "agg.jsonl").read_text().splitlines()
    times = [json.loads(s)["time_per_iter_s"] for s in lines]
    row = aggregate(recs)[0]
    assert row.median_time_s == pytest.approx(float(np.median(times)), rel=1e-15)
    assert row.trials == 4


def test_write_csv_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        bench.write_csv([], tmp_path / "x.csv")


def test_scaling_sweep_guards():
    assert scaling_sweep(dims=[]).rows == []
    with pytest.raises(ValueError):
        scaling_sweep(dims=[2], trials_per_dim=2)


def test_scaling_sweep_small():
    table = scaling_sweep(dims=[2, 3], trials_per_dim=3, T=50, repeats=2)
    assert [r.dim for r in table.rows] == [2, 3]
    assert all(r.median_time_s > 0 for r in table.rows)
    assert table.ratio(3, 2) > 0


def test_horizon_sweep_quadratic_growth():
    out = dict(horizon_sweep((100, 200, 400), repeats=5))
    # the double sum is O(T^2); allow generous slack for timer noise
    assert out[400] / out[100] > 4.0
