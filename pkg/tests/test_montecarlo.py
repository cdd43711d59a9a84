from __future__ import annotations

import csv
import io
import math
from dataclasses import replace

import numpy as np
import pytest

from fpou import kernel
from fpou.errors import InvalidArgumentError
from fpou.estimators import estimate
from fpou.model import simulate_ou
from fpou.montecarlo import (
    TABLE_COLUMNS,
    CellFailure,
    ExperimentConfig,
    emit_histograms,
    emit_rates,
    emit_table,
    table_grid,
    rate_bound,
    run_cell,
    run_grid,
)
from fpou.noise import NoiseSpec, sample_eta, stream_seed

CFG = ExperimentConfig(m=10, alpha=2.0, H=0.75, theta=0.5, lam=1.0, reps=120, master_seed=11)


def test_config_validation():
    for bad in (dict(m=1), dict(alpha=0.9), dict(H=0.5), dict(reps=0), dict(lam=-1.0)):
        with pytest.raises(InvalidArgumentError):
            replace(CFG, **bad)


def test_single_replication_equals_single_path():
    cfg = replace(CFG, reps=1)
    s = run_cell(cfg)
    table = kernel.build_table(10, 2.0, 0.75, 1.0)
    p = sample_eta(NoiseSpec(table.n, table.lam), stream_seed(cfg.master_seed, 0))
    r = estimate(simulate_ou(table, cfg.theta, p), table)
    assert s.stats["lse"].estimates[0] == r.theta_ls
    assert s.stats["mle"].estimates[0] == r.theta_ml
    assert s.stats["lse"].variance == 0.0
    assert any("single replication" in f for f in s.flags)


def test_summary_identities():
    s = run_cell(CFG)
    R = CFG.reps
    for st in s.stats.values():
        assert len(st.estimates) == R
        assert st.mean == pytest.approx(np.mean(st.estimates), rel=1e-14)
        assert st.variance == pytest.approx(np.var(st.estimates, ddof=1), rel=1e-12)
        assert st.mse == pytest.approx(st.variance * (R - 1) / R + st.bias**2, rel=1e-12, abs=1e-14)
        assert st.bias == st.mean - CFG.theta
        np.testing.assert_array_equal(st.normalized, math.sqrt(100 / math.log(100)) * (st.estimates - 0.5))


def test_deterministic_and_thread_invariant():
    a = run_cell(CFG, threads=1)
    b = run_cell(CFG, threads=3)
    c = run_cell(replace(CFG, master_seed=12))
    for name in ("lse", "mle"):
        np.testing.assert_array_equal(a.stats[name].estimates, b.stats[name].estimates)
    assert not np.array_equal(a.stats["lse"].estimates, c.stats["lse"].estimates)


def test_replications_independent():
    s = run_cell(replace(CFG, reps=400))
    e = s.stats["lse"].estimates
    z = e - e.mean()
    ac = float(np.sum(z[1:] * z[:-1]) / np.sum(z * z))
    assert abs(ac) <= 4 / math.sqrt(len(e))


def test_cross_mode_identity():
    sym = run_cell(ExperimentConfig(m=10, alpha=2.0, H=0.75, theta=0.5, lam=None, reps=20,
                                    lambda_mode="fbm_symmetric"))
    exp = run_cell(ExperimentConfig(m=10, alpha=2.0, H=0.75, theta=0.5, lam=100 * math.log(2), reps=20))
    np.testing.assert_array_equal(sym.stats["mle"].estimates, exp.stats["mle"].estimates)


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_empty_grid():
    assert emit_table([]) == ",".join(TABLE_COLUMNS) + "\n"


def test_grid_shape_and_order():
    cfgs = table_grid(m_values=(5, 6), reps=4)
    text = emit_table(run_grid(cfgs))
    rows = _rows(text)
    assert len(rows) == 36
    assert sum(r["estimator"] == "lse" for r in rows) == 18
    keys = [(float(r["H"]), float(r["theta"]), r["estimator"]) for r in rows]
    assert keys == sorted(keys)
    mle_only = _rows(emit_table(run_grid(cfgs[:3]), layout="mle"))
    assert {r["estimator"] for r in mle_only} == {"mle"} and len(mle_only) == 3


def test_grid_records_failures():
    bad = ExperimentConfig(m=200, alpha=2.0, H=0.75, theta=0.5, reps=2)  # n = 40000 > cap
    good = replace(CFG, reps=3)
    grid = run_grid([bad, good])
    assert isinstance(grid[0], CellFailure)
    rows = _rows(emit_table(grid))
    assert any(r["status"].startswith("error") for r in rows)
    assert any(r["status"] == "ok" for r in rows)


def test_histogram_rows():
    cfg = ExperimentConfig(m=100, alpha=1.0, H=0.55, theta=0.4, reps=30)
    rows = _rows(emit_histograms(cfg))
    assert len(rows) == 60
    assert all(float(r["c1"]) == pytest.approx(10.0) for r in rows)  # sqrt(100^1)
    r0 = rows[0]
    assert float(r0["normalized_error"]) == pytest.approx(10.0 * (float(r0["theta_hat"]) - 0.4), rel=1e-12)


def test_histogram_normalization_example():
    from fpou.estimators import normalization

    assert normalization(100, 2.0, 0.55) == 100.0


def test_rate_bound_values():
    assert rate_bound(10, 2.0, 1.0) == pytest.approx(10 * math.exp(-0.01) * (1 - math.exp(-0.01)), rel=1e-14)
    assert rate_bound(10, 2.0, 1.0) == pytest.approx(0.09851, abs=1e-5)
    vals = [rate_bound(m, 2.0, 1.0) for m in (10, 20, 40, 80, 160)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_emit_rates():
    rows = _rows(emit_rates([5, 7], replace(CFG, reps=20)))
    assert [int(r["m"]) for r in rows] == [5, 7]
    assert float(rows[0]["bound"]) == pytest.approx(rate_bound(5, 2.0, 1.0))
    with pytest.raises(InvalidArgumentError):
        emit_rates([], CFG)


def test_empirical_rate_decreases():
    rows = _rows(emit_rates([10, 20, 40, 80], replace(CFG, reps=500)))
    v = [float(r["var_lse"]) for r in rows]
    assert v[0] > v[-1]
