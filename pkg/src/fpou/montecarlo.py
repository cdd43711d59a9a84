"""Replicated experiments: single cells, grids, histogram and rate datasets."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import kernel
from .errors import FpouError, InvalidArgumentError
from .estimators import estimate_sums, normalization, thetas_from_sums
from .kernel import CoefficientTable, QuadMeta
from .model import simulate_paths
from .noise import draw_eta, lambda_for_mode, stream_seed

logger = logging.getLogger(__name__)

ESTIMATORS = ("lse", "mle")
# Replications are processed in blocks of this fixed width so that every
# array operation has the same shape whatever the worker count.
BLOCK = 50

TABLE_COLUMNS = ["theta", "H", "m", "alpha", "lambda", "reps", "estimator",
                 "mean", "variance", "bias", "mse", "status"]


@dataclass(frozen=True)
class ExperimentConfig:
    m: int
    alpha: float
    H: float
    theta: float
    lam: float | None = 1.0
    reps: int = 100
    master_seed: int = 0
    quad_meta: QuadMeta = field(default_factory=QuadMeta)
    lambda_mode: str = "explicit"

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise InvalidArgumentError(f"m must be an integer >= 2, got {self.m}")
        if self.alpha < 1:
            raise InvalidArgumentError(f"alpha must be >= 1, got {self.alpha}")
        kernel.KernelParams(self.H)
        if int(self.reps) != self.reps or self.reps < 1:
            raise InvalidArgumentError(f"reps must be a positive integer, got {self.reps}")
        lambda_for_mode(self.lambda_mode, self.m, self.n, self.lam)

    @property
    def n(self) -> int:
        return kernel.sample_count(self.m, self.alpha)

    @property
    def effective_lambda(self) -> float:
        return lambda_for_mode(self.lambda_mode, self.m, self.n, self.lam)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["quad_meta"] = {"inner": self.quad_meta.inner, "outer": self.quad_meta.outer}
        d["n"] = self.n
        d["effective_lambda"] = self.effective_lambda
        return d


@dataclass(frozen=True)
class EstimatorStats:
    mean: float
    variance: float
    bias: float
    mse: float
    estimates: np.ndarray
    normalized: np.ndarray


@dataclass(frozen=True)
class McSummary:
    config: ExperimentConfig
    stats: dict
    wall_clock: float
    table_checksum: str
    status: str = "ok"
    flags: tuple = ()


def _summarize(est: np.ndarray, theta: float, c1: float) -> EstimatorStats:
    finite = est[np.isfinite(est)]
    r = len(finite)
    if r == 0:
        nan = float("nan")
        return EstimatorStats(nan, nan, nan, nan, est, c1 * (est - theta))
    mean = float(np.mean(finite))
    var = float(np.var(finite, ddof=1)) if r > 1 else 0.0
    return EstimatorStats(
        mean=mean,
        variance=var,
        bias=mean - theta,
        mse=float(np.mean((finite - theta) ** 2)),
        estimates=est,
        normalized=c1 * (est - theta),
    )


def simulate_block(table: CoefficientTable, theta: float, master_seed: int, start: int, stop: int):
    """Estimates for replications ``start..stop-1``; returns ``(lse, mle)`` arrays."""
    kappa = table.kappa
    eta = np.empty((table.n, stop - start))
    for col, r in enumerate(range(start, stop)):
        eta[:, col] = draw_eta(kappa, table.n, stream_seed(master_seed, r))
    X = simulate_paths(table, theta, eta)
    return thetas_from_sums(estimate_sums(table, X), table.m, kappa)


def replicate(table: CoefficientTable, theta: float, reps: int, master_seed: int, threads: int = 1):
    """Estimates for ``reps`` replications, in replication order."""
    bounds = [(s, min(s + BLOCK, reps)) for s in range(0, reps, BLOCK)]

    def work(b):
        return simulate_block(table, theta, master_seed, *b)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    lse = np.concatenate([p[0] for p in parts])
    mle = np.concatenate([p[1] for p in parts])
    return lse, mle


def table_for(config: ExperimentConfig, cache_dir=None):
    return kernel.load_or_build(
        config.m, config.alpha, config.H, config.effective_lambda, config.quad_meta,
        cache_dir=cache_dir,
    )[:2]


def run_cell(config: ExperimentConfig, *, threads: int = 1, cache_dir=None, table=None) -> McSummary:
    start = time.perf_counter()
    if table is None:
        table, checksum = table_for(config, cache_dir)
    else:
        checksum = table.checksum()
    lse, mle = replicate(table, config.theta, config.reps, config.master_seed, threads)
    c1 = normalization(config.m, config.alpha, config.H)
    stats = {
        "lse": _summarize(lse, config.theta, c1),
        "mle": _summarize(mle, config.theta, c1),
    }
    flags = []
    if config.reps == 1:
        flags.append("single replication: variance reported as 0")
    bad = int(np.sum(~np.isfinite(lse)))
    if bad:
        flags.append(f"{bad} degenerate replications excluded")
    return McSummary(
        config=config,
        stats=stats,
        wall_clock=time.perf_counter() - start,
        table_checksum=checksum,
        status="degenerate" if bad == config.reps else "ok",
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class CellFailure:
    config: ExperimentConfig
    status: str


def run_grid(configs, *, threads: int = 1, cache_dir=None) -> list:
    """Run every cell, grouping by table so each table is built once.

    A failing cell becomes a :class:`CellFailure` and the rest still run.
    """
    configs = list(configs)
    keys = [(c.H, c.m, c.n, c.effective_lambda, c.quad_meta) for c in configs]
    results = [None] * len(configs)
    for key in sorted(set(keys), key=lambda k: (k[0], k[1], k[2], k[3])):
        idx = [i for i, k in enumerate(keys) if k == key]
        try:
            table, _ = table_for(configs[idx[0]], cache_dir)
        except FpouError as exc:
            for i in idx:
                results[i] = CellFailure(configs[i], f"error: {exc}")
            continue
        for i in idx:
            try:
                results[i] = run_cell(configs[i], threads=threads, table=table)
            except FpouError as exc:
                results[i] = CellFailure(configs[i], f"error: {exc}")
        del table
    return results


def _fmt(x) -> str:
    return repr(float(x))


def emit_table(grid, layout: str = "both") -> str:
    """CSV text of the grid; ``layout`` is ``both`` or ``mle`` (MLE rows only)."""
    if layout not in ("both", "mle"):
        raise InvalidArgumentError(f"unknown layout {layout!r}")
    names = ESTIMATORS if layout == "both" else ("mle",)
    rows = []
    for cell in grid:
        c = cell.config
        lead = [_fmt(c.theta), _fmt(c.H), str(c.m), _fmt(c.alpha), _fmt(c.effective_lambda), str(c.reps)]
        for name in names:
            if isinstance(cell, CellFailure):
                rows.append(((c.H, c.theta, name), lead + [name, "", "", "", "", cell.status]))
                continue
            s = cell.stats[name]
            rows.append(((c.H, c.theta, name),
                         lead + [name, _fmt(s.mean), _fmt(s.variance), _fmt(s.bias), _fmt(s.mse), cell.status]))
    rows.sort(key=lambda r: r[0])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    w.writerows(r[1] for r in rows)
    return buf.getvalue()


def table_grid(m_values=(10, 100), lam: float = 1.0, reps: int = 100, seed: int = 0,
               thetas=(0.1, 0.5, 0.9), hursts=(0.55, 0.75, 0.9), lambda_mode="explicit"):
    """Cells of a theta x H x m grid at alpha = 2, ordered m, then H, then theta."""
    return [
        ExperimentConfig(m=m, alpha=2.0, H=H, theta=t, lam=lam, reps=reps,
                         master_seed=seed, lambda_mode=lambda_mode)
        for m in m_values for H in hursts for t in thetas
    ]


def emit_histograms(config: ExperimentConfig, *, threads: int = 1, cache_dir=None,
                    summary: McSummary | None = None) -> str:
    """One row per replication and estimator with the raw and normalized errors."""
    s = summary or run_cell(config, threads=threads, cache_dir=cache_dir)
    c1 = normalization(config.m, config.alpha, config.H)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replication", "estimator", "theta_hat", "c1", "normalized_error"])
    for name in ESTIMATORS:
        st = s.stats[name]
        for r, (est, z) in enumerate(zip(st.estimates, st.normalized)):
            w.writerow([r, name, _fmt(est), _fmt(c1), _fmt(z)])
    return buf.getvalue()


def rate_bound(m: int, alpha: float, lam: float) -> float:
    """``m^(3-alpha) kappa (1 - kappa)`` with ``kappa = exp(-lam / m^alpha)``."""
    k = math.exp(-lam / float(m) ** alpha)
    return float(m) ** (3.0 - alpha) * k * (1.0 - k)


def rate_rows(m_grid, config: ExperimentConfig, *, threads: int = 1, cache_dir=None):
    if not m_grid:
        raise InvalidArgumentError("m grid must not be empty")
    rows = []
    for m in m_grid:
        cell = replace(config, m=int(m))
        s = run_cell(cell, threads=threads, cache_dir=cache_dir)
        rows.append({
            "m": int(m),
            "n": cell.n,
            "var_lse": s.stats["lse"].variance,
            "var_mle": s.stats["mle"].variance,
            "bound": rate_bound(m, cell.alpha, cell.effective_lambda),
        })
    return rows


def emit_rates(m_grid, config: ExperimentConfig, *, threads: int = 1, cache_dir=None) -> str:
    rows = rate_rows(m_grid, config, threads=threads, cache_dir=cache_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "n", "alpha", "lambda", "reps", "var_lse", "var_mle", "bound"])
    for r in rows:
        w.writerow([r["m"], r["n"], _fmt(config.alpha), _fmt(config.effective_lambda), config.reps,
                    _fmt(r["var_lse"]), _fmt(r["var_mle"]), _fmt(r["bound"])])
    return buf.getvalue()


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])
