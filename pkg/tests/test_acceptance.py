"""End-to-end acceptance criteria, one PASS/FAIL line each.

Run under pytest (``pytest tests/test_acceptance.py -s``) or directly as a
script (``python3 tests/test_acceptance.py``).  Each ``criterion_N`` returns
``(passed, detail)``; nothing here relaxes a threshold.
"""

from __future__ import annotations

import math
import subprocess
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from fpou import kernel, verify
from fpou.montecarlo import (
    ExperimentConfig,
    McSummary,
    emit_histograms,
    loglog_slope,
    table_grid,
    rate_rows,
    run_cell,
    run_grid,
)

HURSTS = (0.55, 0.75, 0.9)
THETAS = (0.1, 0.5, 0.9)


def criterion_1():
    worst = {}
    failed = []
    for H in HURSTS:
        for theta in THETAS:
            cfg = ExperimentConfig(m=10, alpha=2.0, H=H, theta=theta, lam=1.0, reps=50, master_seed=1)
            report = verify.run_identity_suite(cfg, paths=50)
            for c in report.checks:
                worst[c.name] = max(worst.get(c.name, 0.0), c.value)
            failed += [f"H={H} theta={theta}: {c.name}" for c in report.failures()]
    detail = "; ".join(f"{k} {v:.2g}" for k, v in worst.items())
    return not failed, (", ".join(failed) or detail)


def criterion_2():
    rng = np.random.default_rng(2024)
    worst, failed = 0.0, []
    for m in (10, 100):
        for H in HURSTS:
            tab = kernel.build_table(m, 2.0, H, 1.0)
            n = tab.n
            k = np.concatenate([np.arange(1, n + 1), np.arange(2, n + 1), np.arange(3, n + 1)])
            i = np.concatenate([np.arange(1, n + 1), np.arange(1, n), np.arange(1, n - 1)])
            rk = rng.integers(1, n + 1, size=100)
            ri = np.array([rng.integers(1, kk + 1) for kk in rk])
            k, i = np.concatenate([k, rk]), np.concatenate([i, ri])
            ref = kernel.reference_entries(k, i, H) * m ** (0.5 - H) / math.sqrt(tab.lam)
            err = float(np.max(np.abs(tab.b_scaled[k - 1, i - 1] - ref) / np.abs(ref)))
            worst = max(worst, err)
            if err > 1e-7:
                failed.append(f"m={m} H={H}: {err:.3g}")
            del tab
    return not failed, ", ".join(failed) or f"max relative error {worst:.3g} (threshold 1e-7)"


def criterion_3():
    failed, info = [], []
    for H in HURSTS:
        base = ExperimentConfig(m=10, alpha=2.0, H=H, theta=0.5, lam=1.0, reps=500)
        report = verify.run_bound_suite([base, replace(base, m=30), replace(base, m=100, alpha=1.0)],
                                        reps=500, bracket_paths=100)
        want = [c for c in report.checks
                if c.name.startswith(("diagonal lower bound", "m-scaling of the diagonal"))]
        failed += [f"{c.name}: {c.value:.4g}" for c in want if c.status == "fail"]
        info += [f"{c.name} = {c.value:.3g}" for c in report.checks if c.name.startswith("diagonal upper")]
    assert info
    return not failed, ", ".join(failed) or f"lower bound and scaling hold; informational: {info[0]}"


def criterion_4():
    cfg = ExperimentConfig(m=200, alpha=1.0, H=0.75, theta=0.0, lam=1.0, reps=5000, master_seed=4)
    report = verify.run_distribution_suite(cfg, tv_lambdas=(0.5, 1.0, 5.0))
    wanted = [c for c in report.checks
              if c.name.startswith(("variance at", "covariance at", "binomial to Poisson"))]
    failed = [f"{c.name}: {c.value:.4g}" for c in wanted if c.status == "fail"]
    z = ", ".join(f"{c.name} z={c.value:.2f}" for c in wanted[:2])
    return len(wanted) == 5 and not failed, ", ".join(failed) or z


def criterion_5():
    cfg = ExperimentConfig(m=10, alpha=2.0, H=0.75, theta=0.5, lam=1.0, reps=500, master_seed=5)
    ms = [10, 20, 40, 80]
    rows = rate_rows(ms, cfg)
    ok, parts = True, []
    for key in ("var_lse", "var_mle"):
        v = [r[key] for r in rows]
        slope = loglog_slope(ms, v)
        decreasing = all(a > b for a, b in zip(v, v[1:]))
        ok &= decreasing and -2.0 <= slope <= -0.3
        parts.append(f"{key} {', '.join(f'{x:.2g}' for x in v)} slope {slope:.3g}")
    bias = {name: abs(s.bias) for name, s in run_cell(replace(cfg, m=80)).stats.items()}
    ok &= max(bias.values()) <= 0.1
    parts.append(f"|bias| at m=80 {max(bias.values()):.2g}")
    return ok, "; ".join(parts) + " (slope band [-2, -0.3])"


def _grid_by_key(grid):
    return {(c.config.m, c.config.H, c.config.theta): c for c in grid if isinstance(c, McSummary)}


def criterion_6():
    grids = {lam: _grid_by_key(run_grid(table_grid(m_values=(10, 100), lam=lam, reps=100, seed=6)))
             for lam in (1.0, 0.5, 2.0)}
    g = grids[1.0]
    if len(g) != 18:
        return False, f"only {len(g)} of 18 cells completed"
    bias_ok = all(abs(g[(100, H, t)].stats[name].mean - t) <= 0.1
                  for H in (0.75, 0.9) for t in THETAS for name in ("lse", "mle"))
    decreasing = sum(g[(100, H, t)].stats["lse"].variance < g[(10, H, t)].stats["lse"].variance
                     for H in HURSTS for t in THETAS)
    var_h9 = max(g[(100, 0.9, t)].stats["lse"].variance for t in THETAS)
    sens = []
    for lam, gl in grids.items():
        if lam == 1.0:
            continue
        worst = max((abs(c.stats["lse"].mean - t) for (m, H, t), c in gl.items() if m == 100), default=float("nan"))
        sens.append(f"lambda={lam:g}: max |mean - theta| at m=100 {worst:.2g}")
    ok = bias_ok and decreasing >= 7 and var_h9 < 0.01
    return ok, (f"(a) {'ok' if bias_ok else 'FAILED'}; (b) {decreasing}/9 decreasing; "
                f"(c) max H=0.9 variance {var_h9:.2g}; " + "; ".join(sens))


def criterion_7():
    parts, ok = [], True
    for H in HURSTS:
        cfg = ExperimentConfig(m=100, alpha=1.5, H=H, theta=0.5, lam=1.0, reps=2000, master_seed=7)
        s = run_cell(cfg)
        text = emit_histograms(cfg, summary=s)
        lines = text.splitlines()
        ok &= lines[0] == "replication,estimator,theta_hat,c1,normalized_error" and len(lines) == 4001
        z = s.stats["lse"].normalized
        skew = float(stats.skew(z[np.isfinite(z)]))
        note = ""
        if H == 0.55:
            note = " inside" if -0.5 < skew < 0.5 else " outside (-0.5, 0.5)"
        parts.append(f"H={H}: skewness {skew:.3g}{note}")
    # skewness is reported, never asserted
    return ok, "datasets complete; informational " + ", ".join(parts)


def _cli(*args, out):
    cmd = [sys.executable, "-m", "fpou", *args, "--out", str(out)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"{' '.join(args)} exited {proc.returncode}: {proc.stderr.strip()}")
    return Path(out).read_bytes()


def criterion_8():
    runs = [
        ("simulate", "--m", "10", "--theta", "0.4", "--seed", "8"),
        ("mc", "--m", "10", "--reps", "150", "--seed", "8"),
        ("hist", "--m", "8", "--reps", "120", "--seed", "8"),
        ("tables", "--m-values", "5,6", "--reps", "60", "--seed", "8"),
        ("rates", "--m-grid", "5,7", "--reps", "80", "--seed", "8"),
    ]
    mismatched = []
    with tempfile.TemporaryDirectory() as tmp:
        cache = ("--cache-dir", str(Path(tmp) / "cache"))
        for args in runs:
            outputs = [_cli(*args, *cache, "--threads", th, out=Path(tmp) / f"{args[0]}{j}.csv")
                       for j, th in enumerate(("1", "1", "4"))]
            if not outputs[0] == outputs[1] == outputs[2]:
                mismatched.append(args[0])
    return not mismatched, ("mismatch in " + ", ".join(mismatched)) if mismatched else \
        f"{len(runs)} commands byte-identical across repeats and thread counts"


CRITERIA = {
    1: ("exact algebraic identities", criterion_1),
    2: ("quadrature against the adaptive oracle", criterion_2),
    3: ("kernel bounds and m-scaling", criterion_3),
    4: ("distributional checks", criterion_4),
    5: ("consistency trends", criterion_5),
    6: ("theta x H x m grid trends", criterion_6),
    7: ("histogram artifacts", criterion_7),
    8: ("determinism and thread invariance", criterion_8),
}


def _line(number: int, passed: bool, detail: str) -> str:
    return f"criterion {number} ({CRITERIA[number][0]}): {'PASS' if passed else 'FAIL'} - {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    passed, detail = CRITERIA[number][1]()
    with capsys.disabled():
        print("\n" + _line(number, passed, detail))
    assert passed, detail


if __name__ == "__main__":
    results = []
    for number in sorted(CRITERIA):
        passed, detail = CRITERIA[number][1]()
        print(_line(number, passed, detail), flush=True)
        results.append(passed)
    sys.exit(0 if all(results) else 1)
