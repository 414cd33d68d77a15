"""Command-line entry point ``softgraph``.

Exit codes: 0 success, 2 invalid configuration, 3 numerical failure,
4 acceptance check failed (``run --check`` only).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from ..bent import CurvatureProfile, reconstruct_curve
from ..modes import eigen_residual, mode_energy, mode_eval
from ..planar import NumericalInstability
from ..resolvent import PotentialQ, default_line_grid, dirichlet_matrix, hs_distance, kk_resolvent
from .config import ConfigError, load_config
from .experiments import run_experiment
from .fitting import fit_rate
from .output import emit_outputs, read_sweep_csv

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("softgraph")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="softgraph", description="Confined dynamics experiments and diagnostics.")
    ap.add_argument("--out", type=Path, default=None, help="output directory (default: from config or ./out)")
    ap.add_argument("--threads", type=int, default=None, help="FFT worker threads per propagation")
    ap.add_argument("--verbose", "-v", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the sweep described by a config file")
    r.add_argument("config", type=Path)
    r.add_argument("--check", action="store_true", help="exit 4 if a built-in acceptance check fails")
    r.add_argument("--workers", type=int, default=None, help="sweep points run in parallel")

    f = sub.add_parser("fit", help="fit rates to every observable of a sweep CSV")
    f.add_argument("csv", type=Path)
    f.add_argument("--model", choices=("power", "exponential"), default="power")
    f.add_argument("--observable", action="append", help="restrict to these observables")

    m = sub.add_parser("modes", help="transverse mode energy, eigen-residual and samples")
    m.add_argument("--n", type=int, required=True)
    m.add_argument("--epsilon", type=float, required=True)

    c = sub.add_parser("curve", help="reconstruct the bent curve and write it as CSV")
    c.add_argument("--theta", type=float, required=True)
    c.add_argument("--delta", type=float, required=True)
    c.add_argument("--samples", type=int, default=2001)

    k = sub.add_parser("kernels", help="resolvent and Dirichlet kernels on a window, as CSV")
    k.add_argument("--delta", type=float, required=True)
    k.add_argument("--z", type=complex, required=True, help="spectral parameter, e.g. 1j or 0.3+1j")
    k.add_argument("--theta", type=float, default=0.95 * np.pi)
    k.add_argument("--kinetic", type=float, default=0.5)
    k.add_argument("--window", type=float, default=3.0, help="dump only |s|, |r| <= window")
    return ap


def _out(args, default: Path) -> Path:
    out = args.out or default
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_run(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(exc, file=sys.stderr)
            return EXIT_CONFIG
    for w in caught:
        log.warning("%s", w.message)
    log.info("running %s over %s=%s (hash %s)", cfg.experiment, cfg.sweep_parameter, cfg.sweep_values, cfg.hash[:12])
    result = run_experiment(cfg, threads=args.threads, workers=args.workers)
    paths = emit_outputs(result, args.out)
    for kind, p in paths.items():
        log.info("wrote %s: %s", kind, p)
    for c in result.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    for name, fit in result.fits.items():
        print(f"fit {name}: slope={fit.slope:.4g} r2={fit.r_squared:.4g}")
    if result.failures:
        for v, err in result.failures.items():
            print(f"point {v:g} failed: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.check and not result.passed:
        return EXIT_CHECK
    return EXIT_OK


def _cmd_fit(args) -> int:
    try:
        groups = read_sweep_csv(args.csv)
    except (OSError, ValueError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    out = {}
    for name, (param, xs, ys) in sorted(groups.items()):
        if args.observable and name not in args.observable:
            continue
        try:
            out[name] = fit_rate(xs, ys, args.model).to_dict() | {"param_name": param}
        except ValueError as exc:
            out[name] = {"error": str(exc)}
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _cmd_modes(args) -> int:
    n, eps = args.n, args.epsilon
    h = np.sqrt(eps) / 40.0
    L = 12.0 * np.sqrt(eps) * max(1.0, np.sqrt(n + 0.5) / 2)
    y = np.arange(-np.floor(L / h), np.floor(L / h) + 1) * h
    res = eigen_residual(n, eps, y, order=6)
    print(json.dumps({"n": n, "epsilon": eps, "energy": mode_energy(n, eps), "eigen_residual": res}))
    if args.out:
        p = _out(args, args.out) / f"mode-n{n}-eps{eps:g}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y", "phi"])
            w.writerows([repr(float(a)), repr(float(b))] for a, b in zip(y, mode_eval(n, eps, y)))
        log.info("wrote %s", p)
    return EXIT_OK


def _cmd_curve(args) -> int:
    try:
        p = CurvatureProfile(args.theta, args.delta)
    except ValueError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    s = np.linspace(-3 * p.delta, 3 * p.delta, args.samples)
    curve = reconstruct_curve(p, s)
    path = _out(args, Path("out")) / f"curve-theta{args.theta:g}-delta{args.delta:g}.csv"
    curve.to_csv(path)
    print(json.dumps({"turning_angle": curve.turning_angle, "theta": p.theta, "csv": str(path)}))
    return EXIT_OK


def _dump_kernel(K, path: Path, window: float) -> None:
    rs = np.abs(K.rows) <= window
    cs = np.abs(K.cols) <= window
    sub = type(K)(K.values[np.ix_(rs, cs)], K.rows[rs], K.row_weights[rs], K.cols[cs], K.col_weights[cs], K.info)
    sub.to_csv(path)


def _cmd_kernels(args) -> int:
    z = args.z
    try:
        Q = PotentialQ.from_curvature(args.theta)
        line = default_line_grid(z)
        K = kk_resolvent(z, args.delta, Q, line, kinetic=args.kinetic)
        D = dirichlet_matrix(z, line, kinetic=args.kinetic)
    except ValueError as exc:
        print(exc, file=sys.stderr)
        return EXIT_NUMERICAL
    out = _out(args, Path("out"))
    tag = f"delta{args.delta:g}-z{z.real:g}{z.imag:+g}i"
    _dump_kernel(K, out / f"kernel-{tag}.csv", args.window)
    _dump_kernel(D, out / f"dirichlet-{tag}.csv", args.window)
    hs = hs_distance(K, D)
    print(json.dumps({"delta": args.delta, "z": [z.real, z.imag], "hs_distance": hs,
                      "hs_relative": hs / D.hs_norm(), "condition_number": K.info["cond"]}))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": _cmd_run, "fit": _cmd_fit, "modes": _cmd_modes, "curve": _cmd_curve,
                "kernels": _cmd_kernels}
    try:
        return handlers[args.command](args)
    except NumericalInstability as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
