"""Command-line entry point: ``fpou <command> [flags]``.

Exit codes: 0 success, 1 invalid input, 2 I/O or resource limit,
3 an asserted verification check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, kernel, montecarlo, verify
from .errors import (
    CorruptedInputError,
    DegeneratePathError,
    FormatError,
    FpouError,
    InvalidArgumentError,
    ResourceLimitError,
)
from .estimators import estimate
from .kernel import QuadMeta
from .model import ObservationPath, simulate_ou
from .montecarlo import ExperimentConfig
from .noise import NoiseSpec, lambda_for_mode, sample_eta, stream_seed

EXIT_OK, EXIT_INVALID, EXIT_IO, EXIT_VERIFY = 0, 1, 2, 3

_DEFAULTS = {
    "m": 10,
    "alpha": 2.0,
    "hurst": 0.75,
    "theta": 0.5,
    "lambda_": 1.0,
    "fbm_mode": None,
    "reps": 100,
    "seed": 0,
    "threads": 1,
    "format": "csv",
    "quad_inner": 16,
    "quad_outer": 8,
    "thetas": "0.1,0.5,0.9",
    "hursts": "0.55,0.75,0.9",
    "m_values": "10,100",
    "m_grid": "10,20,40,80",
    "layout": None,
    "suite": "all",
}


class UsageError(Exception):
    pass


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text) -> list:
    return [int(x) for x in _floats(text)]


# --------------------------------------------------------------------------
# argument handling


def _common(p: argparse.ArgumentParser, *, theta=True, reps=True):
    p.add_argument("--config", help="JSON file whose keys mirror the flags; flags win")
    p.add_argument("--m", type=int, help="grid denominator (step 1/m)")
    p.add_argument("--alpha", type=float, help="sample-size exponent, n = round(m**alpha)")
    p.add_argument("--hurst", type=float, help="Hurst index in (0.501, 1)")
    p.add_argument("--lambda", dest="lambda_", type=float, help="Poisson intensity")
    p.add_argument("--fbm-mode", choices=["symmetric", "literal"],
                   help="set lambda from n ln 2 (symmetric) or m ln 2 (literal)")
    p.add_argument("--quad-inner", type=int)
    p.add_argument("--quad-outer", type=int)
    p.add_argument("--cache-dir", help="coefficient cache directory (default $FPOU_CACHE_DIR)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker threads (never changes results)")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("-v", "--verbose", action="store_true")
    if theta:
        p.add_argument("--theta", type=float, help="true drift used for simulation")
    if reps:
        p.add_argument("--reps", type=int, help="replications")


class _Parser(argparse.ArgumentParser):
    # malformed flags are validation errors, not I/O errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fpou", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fpou {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("coeffs", help="build or reuse a coefficient table"), theta=False, reps=False)
    _common(sub.add_parser("simulate", help="simulate one observation path"), reps=False)

    p = sub.add_parser("estimate", help="estimate theta from a path CSV")
    _common(p, theta=False, reps=False)
    p.add_argument("--input", required=True, help="CSV with header index,t,x[,eta]")

    _common(sub.add_parser("mc", help="Monte Carlo summary for one cell"))

    p = sub.add_parser("tables", help="Monte Carlo grid over theta x H x m")
    _common(p, theta=False)
    p.add_argument("--thetas")
    p.add_argument("--hursts")
    p.add_argument("--m-values")
    p.add_argument("--layout", choices=["both", "mle"])

    _common(sub.add_parser("hist", help="normalized-error dataset"))

    p = sub.add_parser("rates", help="empirical variance against the rate bound")
    _common(p)
    p.add_argument("--m-grid")

    p = sub.add_parser("verify", help="run invariant suites")
    _common(p)
    p.add_argument("--suite", choices=["all", *verify.SUITES])
    return parser


def _merge(args) -> argparse.Namespace:
    """Fill unset flags from ``--config`` and then from the built-in defaults."""
    file_values = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a JSON object")
    aliases = {"lambda": "lambda_", "hurst_index": "hurst", "H": "hurst", "master_seed": "seed"}
    for key, value in file_values.items():
        key = aliases.get(key, key.replace("-", "_"))
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    for key, value in _DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    if getattr(args, "cache_dir", None) is None:
        args.cache_dir = os.environ.get("FPOU_CACHE_DIR") or None
    return args


def _validate(args):
    if args.m < 2:
        raise UsageError(f"--m must be at least 2 (got {args.m})")
    if not args.alpha >= 1:
        raise UsageError(f"--alpha must be at least 1 (got {args.alpha})")
    if not kernel.H_MIN < args.hurst < 1:
        raise UsageError(f"--hurst must lie in ({kernel.H_MIN:g}, 1) (got {args.hurst})")
    if args.fbm_mode is None and not args.lambda_ > 0:
        raise UsageError(f"--lambda must be positive (got {args.lambda_})")
    if getattr(args, "reps", 1) < 1:
        raise UsageError(f"--reps must be at least 1 (got {args.reps})")
    if args.threads < 1:
        raise UsageError(f"--threads must be at least 1 (got {args.threads})")
    if args.quad_inner < 1 or args.quad_outer < 1:
        raise UsageError("quadrature orders must be positive")
    for name in ("thetas", "hursts", "m_values", "m_grid"):
        if hasattr(args, name):
            try:
                values = _floats(getattr(args, name))
            except ValueError:
                raise UsageError(f"--{name.replace('_', '-')} must be a comma-separated list of numbers")
            if name == "hursts" and not all(kernel.H_MIN < h < 1 for h in values):
                raise UsageError(f"--hursts values must lie in ({kernel.H_MIN:g}, 1)")
            if name in ("m_values", "m_grid") and not all(v >= 2 and v == int(v) for v in values):
                raise UsageError(f"--{name.replace('_', '-')} values must be integers >= 2")


def _lambda_mode(args) -> str:
    return {"symmetric": "fbm_symmetric", "literal": "fbm_literal", None: "explicit"}[args.fbm_mode]


def _config(args, **over) -> ExperimentConfig:
    fields = dict(
        m=args.m,
        alpha=args.alpha,
        H=args.hurst,
        theta=getattr(args, "theta", 0.0),
        lam=args.lambda_ if args.fbm_mode is None else None,
        reps=getattr(args, "reps", 1),
        master_seed=args.seed,
        quad_meta=QuadMeta(args.quad_inner, args.quad_outer),
        lambda_mode=_lambda_mode(args),
    )
    fields.update(over)
    return ExperimentConfig(**fields)


# --------------------------------------------------------------------------
# output plumbing


class Run:
    """Collects outputs and writes the run manifest next to ``--out``."""

    def __init__(self, args):
        self.args = args
        self.started = datetime.now(timezone.utc).isoformat()
        self.outputs = []
        self.checksums = {}
        self.status = "running"

    def emit(self, text: str, path=None):
        target = path or self.args.out
        if target is None:
            sys.stdout.write(text)
            return
        target = Path(target)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8", newline="")
        self.outputs.append(str(target))

    def manifest(self) -> dict:
        args = {k: v for k, v in vars(self.args).items() if k not in ("verbose",)}
        return {
            "tool": "fpou",
            "version": __version__,
            "command": self.args.command,
            "config": args,
            "master_seed": getattr(self.args, "seed", None),
            "coefficient_checksums": self.checksums,
            "outputs": self.outputs,
            "status": self.status,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
        }

    def write_manifest(self):
        if self.args.out is None:
            return
        path = Path(str(self.args.out) + ".manifest.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.manifest(), indent=2, default=str) + "\n", encoding="utf-8")


def _rows_to_json(csv_text: str) -> str:
    rows = list(csv.DictReader(io.StringIO(csv_text)))
    return json.dumps(rows, indent=2) + "\n"


def _render(args, csv_text: str) -> str:
    return _rows_to_json(csv_text) if args.format == "json" else csv_text


# --------------------------------------------------------------------------
# commands


def cmd_coeffs(args, run: Run) -> int:
    cfg = _config(args, theta=0.0, reps=1)
    table, checksum, reused = kernel.load_or_build(
        cfg.m, cfg.alpha, cfg.H, cfg.effective_lambda, cfg.quad_meta, cache_dir=args.cache_dir
    )
    run.checksums[f"H={cfg.H:g},m={cfg.m},n={cfg.n}"] = checksum
    if args.out:
        checksum = kernel.cache_write(table, args.out)
        run.outputs.append(str(args.out))
    elif args.cache_dir:
        run.outputs.append(str(kernel.cache_path(args.cache_dir, cfg.m, cfg.n, cfg.H, cfg.effective_lambda, cfg.quad_meta)))
    note = "reused" if reused else "built"
    print(f"{checksum}  n={table.n} ({note})")
    return EXIT_OK


def _path_csv(path: ObservationPath, eta=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "t", "x"] + (["eta"] if eta is not None else []))
    for i, x in enumerate(path.values):
        row = [i, repr(i / path.m), repr(float(x))]
        if eta is not None:
            row.append("" if i == 0 else repr(float(eta[i - 1])))
        w.writerow(row)
    return buf.getvalue()


def cmd_simulate(args, run: Run) -> int:
    cfg = _config(args, reps=1)
    table, checksum = montecarlo.table_for(cfg, args.cache_dir)
    run.checksums["table"] = checksum
    noise = sample_eta(NoiseSpec(table.n, table.lam), stream_seed(cfg.master_seed, 0))
    path = simulate_ou(table, cfg.theta, noise)
    if args.format == "json":
        text = json.dumps({"m": path.m, "n": path.n, "theta": cfg.theta, "x": path.values.tolist(),
                           "eta": noise.values.tolist()}) + "\n"
    else:
        text = _path_csv(path, noise.values)
    run.emit(text)
    return EXIT_OK


def read_path_csv(path, m: int):
    """Load ``index,t,x[,eta]``; returns the observation path and the optional noise."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"index", "t", "x"} <= set(reader.fieldnames):
                raise FormatError(f"{path}: header must start with index,t,x", field="header")
            rows = list(reader)
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: not a text CSV ({exc})", field="encoding") from exc
    if len(rows) < 3:
        raise FormatError(f"{path}: need at least three observations", field="rows")
    try:
        idx = [int(r["index"]) for r in rows]
        xs = [float(r["x"]) for r in rows]
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: unparsable number ({exc})", field="x") from exc
    if idx != list(range(len(rows))):
        raise FormatError(f"{path}: index column must run 0, 1, 2, ...", field="index")
    if not all(math.isfinite(x) for x in xs):
        raise FormatError(f"{path}: non-finite observation", field="x")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        obs = ObservationPath.ingest(xs, m)
    for w in caught:
        logging.getLogger("fpou").warning("%s", w.message)
    eta = None
    if "eta" in (reader.fieldnames or []) and all(r.get("eta") not in (None, "") for r in rows[1:]):
        eta = np.array([float(r["eta"]) for r in rows[1:]])
    return obs, eta


def cmd_estimate(args, run: Run) -> int:
    try:
        obs, _ = read_path_csv(args.input, args.m)
    except FileNotFoundError as exc:
        raise OSError(f"cannot read {args.input}: {exc.strerror}") from exc
    lam = lambda_for_mode(_lambda_mode(args), args.m, obs.n, args.lambda_)
    qm = QuadMeta(args.quad_inner, args.quad_outer)
    table, checksum, _ = kernel.load_or_build(args.m, math.log(obs.n) / math.log(args.m), args.hurst, lam, qm,
                                              cache_dir=args.cache_dir, n=obs.n)
    run.checksums["table"] = checksum
    result = estimate(obs, table)
    payload = result.as_dict()
    payload["hurst"] = args.hurst
    payload["lambda"] = lam
    payload["notes"] = list(obs.notes)
    run.emit(json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


def cmd_mc(args, run: Run) -> int:
    cfg = _config(args)
    s = montecarlo.run_cell(cfg, threads=args.threads, cache_dir=args.cache_dir)
    run.checksums["table"] = s.table_checksum
    for flag in s.flags:
        logging.getLogger("fpou").warning("%s", flag)
    run.emit(_render(args, montecarlo.emit_table([s])))
    return EXIT_OK


def cmd_tables(args, run: Run) -> int:
    mode = _lambda_mode(args)
    configs = [
        _config(args, m=m, H=H, theta=t)
        for m in _ints(args.m_values) for H in _floats(args.hursts) for t in _floats(args.thetas)
    ]
    grid = montecarlo.run_grid(configs, threads=args.threads, cache_dir=args.cache_dir)
    for cell in grid:
        if isinstance(cell, montecarlo.McSummary):
            c = cell.config
            run.checksums[f"H={c.H:g},m={c.m},n={c.n}"] = cell.table_checksum
    layout = args.layout or ("mle" if mode != "explicit" else "both")
    run.emit(_render(args, montecarlo.emit_table(grid, layout)))
    return EXIT_OK


def cmd_hist(args, run: Run) -> int:
    cfg = _config(args)
    s = montecarlo.run_cell(cfg, threads=args.threads, cache_dir=args.cache_dir)
    run.checksums["table"] = s.table_checksum
    run.emit(_render(args, montecarlo.emit_histograms(cfg, summary=s)))
    return EXIT_OK


def cmd_rates(args, run: Run) -> int:
    cfg = _config(args)
    run.emit(_render(args, montecarlo.emit_rates(_ints(args.m_grid), cfg, threads=args.threads,
                                                 cache_dir=args.cache_dir)))
    return EXIT_OK


def cmd_verify(args, run: Run) -> int:
    base = _config(args)
    names = verify.SUITES if args.suite == "all" else (args.suite,)
    reports = [verify.run_suite(name, verify.default_config(name, base)) for name in names]
    payload = {"passed": all(r.passed for r in reports), "suites": [r.to_dict() for r in reports]}
    if args.format == "json":
        text = json.dumps(payload, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["suite", "check", "status", "value", "threshold", "anchor", "detail"])
        for r in reports:
            for c in r.checks:
                w.writerow([r.suite, c.name, c.status, repr(c.value), repr(c.threshold), c.anchor, c.detail])
        text = buf.getvalue()
    run.emit(text)
    for r in reports:
        for c in r.failures():
            print(f"FAIL {r.suite}: {c.name} ({c.value:.4g} vs {c.threshold:.4g}; {c.anchor})", file=sys.stderr)
    return EXIT_OK if payload["passed"] else EXIT_VERIFY


COMMANDS = {
    "coeffs": cmd_coeffs,
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "mc": cmd_mc,
    "tables": cmd_tables,
    "hist": cmd_hist,
    "rates": cmd_rates,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    run = None
    try:
        args = _merge(args)
        _validate(args)
        run = Run(args)
        code = COMMANDS[args.command](args, run)
        run.status = "ok" if code == EXIT_OK else "verify-failed"
        return code
    except (UsageError, InvalidArgumentError, DegeneratePathError, CorruptedInputError, FormatError) as exc:
        code, status = (EXIT_IO, "io-error") if isinstance(exc, FormatError) else (EXIT_INVALID, "invalid")
        print(f"error: {exc}", file=sys.stderr)
        if run:
            run.status = status
        return code
    except ResourceLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run:
            run.status = "resource-limit"
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run:
            run.status = "io-error"
        return EXIT_IO
    except FpouError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if run:
            run.status = "error"
        return EXIT_INVALID
    finally:
        if run is not None:
            try:
                run.write_manifest()
            except OSError as exc:
                print(f"warning: manifest not written: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
