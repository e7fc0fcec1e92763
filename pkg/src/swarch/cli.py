"""Command-line entry points: ingest, simulate, calibrate, analyze, restarts.

File conventions: series and tables are CSV (comma, period decimal, header
row); parameter and diagnostics documents are JSON with sorted keys, so a
write-read-write cycle is byte identical.  All outputs are written through a
temp-then-rename step, and every stochastic command requires an explicit
seed.  Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass
from datetime import date

import numpy as np

from .calibrate import CalibrationResult, ObjectiveSpec, calibrate_beta, calibrate_theta
from .core import InverseGamma, ModelParams, Point, Theta
from .empirics import (
    ReturnSeries,
    empirical_acf_curve,
    empirical_hurst,
    empirical_moment_curve,
    log_returns,
    mug_shot,
)
from .errors import NonPositivePrice, NumericError, SwarchError, WindowTooWide
from .restarts import detect_restarts, longmem_vol_samples
from .simulate import SeedSpec, sample_returns
from .theory import (
    acf_returns_curve,
    hurst_fit,
    longmem_vol_pdf,
    marginal_pdf,
    moment_curve,
)

__all__ = [
    "main",
    "cmd_ingest",
    "cmd_simulate",
    "cmd_calibrate",
    "cmd_analyze",
    "cmd_restarts",
    "read_params_doc",
    "write_params_doc",
    "read_returns_csv",
]


class IngestError(SwarchError):
    """Malformed price input; message carries the offending line number."""


# --------------------------------------------------------------------------
# Atomic file helpers
# --------------------------------------------------------------------------

def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    out = []
    out.append(",".join(header))
    for row in rows:
        out.append(",".join(_fmt(v) for v in row))
    return "\n".join(out) + "\n"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "NA"
        return repr(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_params_doc(path: str, doc: dict) -> None:
    _atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def read_params_doc(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def read_returns_csv(path: str) -> ReturnSeries:
    values = []
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{path}: empty returns file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                values.append(float(row[0]))
            except ValueError:
                raise IngestError(f"{path}: line {lineno}: bad return value {row[0]!r}")
    x = np.array(values)
    mean_removed = abs(x.sum()) <= 1e-12 * len(x) * x.std() if len(x) else False
    return ReturnSeries(values=x, mean_removed=bool(mean_removed))


def _params_from_doc(doc: dict) -> ModelParams:
    if doc["model"] == "complete":
        mixture = InverseGamma(alpha=doc["alpha"], beta=doc["beta"])
    elif doc["model"] == "null":
        mixture = Point(sigma0=doc["sigma0"])
    else:
        raise ValueError(f"unknown model {doc['model']!r}")
    return ModelParams(D=doc["D"], nu=doc["nu"], mixture=mixture, M=doc["M"])


# --------------------------------------------------------------------------
# ingest
# --------------------------------------------------------------------------

def cmd_ingest(prices_file: str, out_file: str) -> str:
    """Two-column (ISO date, close) CSV to zero-mean log returns plus summary."""
    closes = []
    with open(prices_file) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestError(f"{prices_file}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise IngestError(f"{prices_file}: line {lineno}: need date,close")
            try:
                date.fromisoformat(row[0].strip())
            except ValueError:
                raise IngestError(
                    f"{prices_file}: line {lineno}: bad ISO date {row[0]!r}"
                )
            try:
                close = float(row[1])
            except ValueError:
                raise IngestError(
                    f"{prices_file}: line {lineno}: bad close {row[1]!r}"
                )
            if not close > 0:
                raise NonPositivePrice(
                    f"{prices_file}: line {lineno}: non-positive close {close}"
                )
            closes.append(close)
    rs = log_returns(np.array(closes))
    _atomic_write_text(out_file, _csv_text(["x"], ((v,) for v in rs.values)))
    summary = {
        "T": len(rs),
        "mean_removed": True,
        "std": float(rs.values.std()),
    }
    write_params_doc(out_file + ".summary.json", summary)
    return out_file


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def cmd_simulate(config: dict, out_file: str) -> str:
    """Seeded model path written as a t,i,y,x table (t is 1-based)."""
    params = _params_from_doc(config)
    if config["T"] < 1:
        raise ValueError("T must be >= 1")
    path = sample_returns(
        params, config["T"], SeedSpec(config["seed"], config.get("stream", 0))
    )
    rows = zip(range(1, len(path) + 1), path.i.tolist(), path.y, path.x)
    _atomic_write_text(out_file, _csv_text(["t", "i", "y", "x"], rows))
    return out_file


# --------------------------------------------------------------------------
# calibrate
# --------------------------------------------------------------------------

def cmd_calibrate(
    returns_file: str,
    M: int,
    out_file: str,
    Q=(1.0,),
    model: str = "complete",
    bounds: dict | None = None,
) -> str:
    """Calibrate the shape parameters and the scale, then persist them."""
    rs = read_returns_csv(returns_file)
    spec = ObjectiveSpec(M=M, Q=tuple(Q), theta_bounds=bounds or {}, model=model)
    result = calibrate_theta(rs, spec)
    scale = calibrate_beta(rs, result.theta_hat, spec.Q)
    doc = {
        "model": model,
        "D": result.theta_hat.D,
        "nu": result.theta_hat.nu,
        "M": M,
        "objective": result.objective_value,
        "diagnostics": {
            "evaluations": result.evaluations,
            "converged": result.converged,
            "Q": list(spec.Q),
        },
    }
    if model == "complete":
        doc["alpha"] = result.theta_hat.alpha
        doc["beta"] = scale
    else:
        doc["sigma0"] = scale
    write_params_doc(out_file, doc)
    return out_file


# --------------------------------------------------------------------------
# analyze
# --------------------------------------------------------------------------

def _freedman_diaconis_edges(x: np.ndarray, cap: int = 400) -> np.ndarray:
    q75, q25 = np.percentile(x, [75, 25])
    width = 2 * (q75 - q25) / len(x) ** (1 / 3)
    span = float(np.abs(x).max())
    if width <= 0:
        width = span / 50 or 1.0
    n = min(int(math.ceil(2 * span / width)), cap)
    return np.linspace(-span, span, n + 1)


def cmd_analyze(
    returns_file: str,
    out_prefix: str,
    params_file: str | None = None,
    q_orders=(1.0,),
    t_max: int | None = None,
    hurst_orders=(0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0),
    mug_grid=tuple(range(5, 101, 5)),
    seed: int = 1,
) -> list[str]:
    """Plot-ready tables: moment and ACF curves, scaling fits, density, mug shot.

    A matching theory (or model-simulated, for the mug shot) series column is
    added when a parameter document is supplied.
    """
    rs = read_returns_csv(returns_file)
    params = _params_from_doc(read_params_doc(params_file)) if params_file else None
    T = len(rs)
    window = t_max or (params.M if params else 63)
    window = min(window, T // 10 if T >= 20 else T)
    written = []

    rows = []
    for q in q_orders:
        emp = empirical_moment_curve(rs, q, window)
        for t, v in zip(emp.ts, emp.values):
            rows.append(("empirical", q, int(t), float(v)))
        if params is not None:
            theta = Theta(params.D, params.nu)
            th = moment_curve(q, window, theta, eps=1e-6)
            for t, v in zip(th.ts, th.values):
                rows.append(("theory", q, int(t), float(v)))
    path = out_prefix + ".moments.csv"
    _atomic_write_text(path, _csv_text(["series", "q", "t", "value"], rows))
    written.append(path)

    rows = []
    for q in q_orders:
        emp = empirical_acf_curve(rs, q, window)
        for t, v in zip(emp.ts, emp.values):
            rows.append(("empirical", q, int(t), float(v)))
        if params is not None:
            th = acf_returns_curve(q, min(window, params.M + 1), params)
            for t, v in zip(th.ts, th.values):
                rows.append(("theory", q, int(t), float(v)))
    path = out_prefix + ".acf.csv"
    _atomic_write_text(path, _csv_text(["series", "q", "t", "value"], rows))
    written.append(path)

    rows = []
    for q in hurst_orders:
        fit = empirical_hurst(rs, q, (2, window))
        rows.append(("empirical", q, fit.H_q, fit.eps_q))
        if params is not None:
            th = moment_curve(q, window, Theta(params.D, params.nu), eps=1e-6)
            tfit = hurst_fit(th, (2, window))
            rows.append(("theory", q, tfit.H_q, tfit.eps_q))
    path = out_prefix + ".hurst.csv"
    _atomic_write_text(path, _csv_text(["series", "q", "H_q", "eps_q"], rows))
    written.append(path)

    edges = _freedman_diaconis_edges(rs.values)
    counts, _ = np.histogram(rs.values, bins=edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    dens = counts / (len(rs) * np.diff(edges))
    rows = [("histogram", float(c), float(d)) for c, d in zip(centers, dens)]
    if params is not None:
        theory_d = marginal_pdf(centers, params, eps=1e-10)
        rows += [("theory", float(c), float(d)) for c, d in zip(centers, theory_d)]
    path = out_prefix + ".pdf.csv"
    _atomic_write_text(path, _csv_text(["series", "x", "density"], rows))
    written.append(path)

    grid_pts = [g for g in mug_grid if 2 * g <= T]
    rows = []
    if grid_pts:
        grid = mug_shot(rs, grid_pts, grid_pts)
        rows = [
            ("empirical", int(a), int(b), float(grid.values[i, j]))
            for i, a in enumerate(grid.t_h)
            for j, b in enumerate(grid.t_r)
        ]
        if params is not None:
            sim = sample_returns(params, T, SeedSpec(seed))
            sim_grid = mug_shot(ReturnSeries(sim.x), grid_pts, grid_pts)
            rows += [
                ("model", int(a), int(b), float(sim_grid.values[i, j]))
                for i, a in enumerate(sim_grid.t_h)
                for j, b in enumerate(sim_grid.t_r)
            ]
    path = out_prefix + ".mugshot.csv"
    _atomic_write_text(path, _csv_text(["series", "t_h", "t_r", "value"], rows))
    written.append(path)
    return written


# --------------------------------------------------------------------------
# restarts
# --------------------------------------------------------------------------

def cmd_restarts(
    returns_file: str,
    params_file: str,
    out_prefix: str,
    tau: int = 2,
    vol_window: int | None = None,
    truth_file: str | None = None,
) -> list[str]:
    """Reset posterior, selected reset times, decoded paths, volatility table."""
    rs = read_returns_csv(returns_file)
    params = _params_from_doc(read_params_doc(params_file))
    diag = detect_restarts(rs, params, tau)
    written = []

    path = out_prefix + ".posterior.csv"
    rows = zip(range(1, len(rs) + 1), diag.posterior)
    _atomic_write_text(path, _csv_text(["t", "posterior"], rows))
    written.append(path)

    if params.nu * len(rs) < 1:
        print("warning: nu*T < 1, no restarts selected", file=sys.stderr)
    path = out_prefix + ".restarts.csv"
    rows = ((int(t) + 1,) for t in diag.restart_times)
    _atomic_write_text(path, _csv_text(["t"], rows))
    written.append(path)

    path = out_prefix + ".path.csv"
    rows = zip(
        range(1, len(rs) + 1), diag.i_path.tolist(), diag.y_path, rs.values
    )
    _atomic_write_text(path, _csv_text(["t", "i", "y", "x"], rows))
    written.append(path)

    window = vol_window or params.M
    samples = longmem_vol_samples(diag.y_path, diag.restart_times, window)
    if isinstance(params.mixture, InverseGamma):
        theory = longmem_vol_pdf(
            samples.samples, window, params.mixture.alpha, params.mixture.beta
        )
    else:
        theory = np.full(len(samples.samples), np.nan)
    path = out_prefix + ".volatility.csv"
    rows = zip(samples.samples, theory)
    _atomic_write_text(path, _csv_text(["S", "k_t"], rows))
    written.append(path)

    if truth_file is not None:
        truth = np.loadtxt(truth_file, dtype=int, skiprows=1, ndmin=1)
        exact, close = _recovery_rates(diag.restart_times + 1, truth)
        print(f"recovery: exact {exact:.1%}, within +-2 steps {close:.1%}")
    return written


def _recovery_rates(found_1based: np.ndarray, truth_1based: np.ndarray):
    truth = np.asarray(truth_1based)
    found = np.asarray(found_1based)
    if len(truth) == 0:
        return 0.0, 0.0
    exact = np.isin(truth, found).mean()
    close = np.array(
        [np.abs(found - t).min() <= 2 if len(found) else False for t in truth]
    ).mean()
    return float(exact), float(close)


# --------------------------------------------------------------------------
# Argument parsing and dispatch
# --------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarch",
        description="Markov-switching ARCH return model toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="prices CSV to zero-mean log returns")
    p.add_argument("prices_file")
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="simulate a seeded model path")
    p.add_argument("--model", choices=["complete", "null"], default="complete")
    p.add_argument("--D", type=float, required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--sigma0", type=float)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate", help="method-of-moments estimation")
    p.add_argument("returns_file")
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--q", type=float, action="append", dest="Q")
    p.add_argument("--model", choices=["complete", "null"], default="complete")
    p.add_argument("--bound", action="append", default=[], metavar="NAME=LO,HI")
    p.add_argument("--out", required=True)

    p = sub.add_parser("analyze", help="empirical tables with theory overlays")
    p.add_argument("returns_file")
    p.add_argument("--params")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--q", type=float, action="append", dest="Q")
    p.add_argument("--t-max", type=int)
    p.add_argument("--mug-max", type=int, default=100)
    p.add_argument("--mug-step", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("restarts", help="posterior restart detection")
    p.add_argument("returns_file")
    p.add_argument("--params", required=True)
    p.add_argument("--tau", type=int, default=2)
    p.add_argument("--vol-window", type=int)
    p.add_argument("--truth")
    p.add_argument("--out-prefix", required=True)
    return parser


def _parse_bounds(pairs) -> dict:
    out = {}
    for item in pairs:
        name, _, rest = item.partition("=")
        lo, _, hi = rest.partition(",")
        out[name] = (float(lo), float(hi))
    return out


def _dispatch(args) -> None:
    if args.command == "ingest":
        cmd_ingest(args.prices_file, args.out)
    elif args.command == "simulate":
        doc = {
            "model": args.model,
            "D": args.D,
            "nu": args.nu,
            "M": args.M,
            "T": args.T,
            "seed": args.seed,
            "stream": args.stream,
        }
        if args.model == "complete":
            if args.alpha is None or args.beta is None:
                raise ValueError("complete model requires --alpha and --beta")
            doc.update(alpha=args.alpha, beta=args.beta)
        else:
            if args.sigma0 is None:
                raise ValueError("null model requires --sigma0")
            doc.update(sigma0=args.sigma0)
        cmd_simulate(doc, args.out)
    elif args.command == "calibrate":
        cmd_calibrate(
            args.returns_file,
            args.M,
            args.out,
            Q=tuple(args.Q) if args.Q else (1.0,),
            model=args.model,
            bounds=_parse_bounds(args.bound),
        )
    elif args.command == "analyze":
        grid = tuple(range(args.mug_step, args.mug_max + 1, args.mug_step))
        cmd_analyze(
            args.returns_file,
            args.out_prefix,
            params_file=args.params,
            q_orders=tuple(args.Q) if args.Q else (1.0,),
            t_max=args.t_max,
            mug_grid=grid,
            seed=args.seed,
        )
    elif args.command == "restarts":
        cmd_restarts(
            args.returns_file,
            args.params,
            args.out_prefix,
            tau=args.tau,
            vol_window=args.vol_window,
            truth_file=args.truth,
        )


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _dispatch(args)
    except (NonPositivePrice, WindowTooWide, IngestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
