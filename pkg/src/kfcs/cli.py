"""Command line entry point: ``kfcs {rip,analyze,simulate}``.

Exit status is 0 on success, 1 for invalid arguments or configuration and
2 for I/O failures.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _cmd_rip(args) -> int:
    from .sensing import BudgetExceededError, generate_gaussian_matrix, rip_constant, roc_constant

    if args.n < 1 or not 1 <= args.order <= args.m:
        raise ValueError("need n >= 1 and 1 <= order <= m")
    A = generate_gaussian_matrix(args.n, args.m, args.seed)
    try:
        print(repr(rip_constant(A, args.order, args.budget).delta))
        if args.order2 is not None:
            print(repr(roc_constant(A, args.order, args.order2, args.budget).theta))
    except BudgetExceededError as exc:
        raise ValueError(str(exc)) from exc
    return EXIT_OK


def _cmd_tau_det(args) -> int:
    from .stability import detection_delay

    print(detection_delay(args.eps, args.s, args.bstar, args.sigma_sys2))
    return EXIT_OK


def _cmd_bounds(args) -> int:
    from .harness import load_config, record_kfcs_trial
    from .stability import BoundTrace, bound_trace

    cfg = load_config(args.config, seed=args.seed)
    rec = record_kfcs_trial(cfg, args.trial)
    trace = bound_trace(
        rec.traj.x, rec.traj.supports, rec.est_supports, rec.xhat, rec.x_init, rec.noise,
        rec.A, cfg.algorithm("kfcs"), A0=rec.A0,
    )
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(BoundTrace.COLUMNS)
        for row in trace.rows():
            w.writerow([int(row[0])] + [f"{float(v):.10g}" for v in row[1:]])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _cmd_simulate(args) -> int:
    from .harness import emit_csv, load_config, run_experiment

    cfg = load_config(args.config, trials=args.trials, seed=args.seed, workers=args.workers)
    metrics = run_experiment(cfg)
    out = args.out if args.out is not None else cfg.out
    text = emit_csv(metrics, out)
    if out is None:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kfcs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    rip = sub.add_parser("rip", help="isometry / orthogonality constants of a random matrix")
    rip.add_argument("--n", type=int, required=True)
    rip.add_argument("--m", type=int, required=True)
    rip.add_argument("--seed", type=int, required=True)
    rip.add_argument("--order", type=int, required=True)
    rip.add_argument("--order2", type=int)
    rip.add_argument("--budget", type=int, default=2_000_000)
    rip.set_defaults(func=_cmd_rip)

    analyze = sub.add_parser("analyze", help="stability calculators")
    asub = analyze.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    tau = asub.add_parser("tau-det", help="high-probability detection delay")
    tau.add_argument("--eps", type=float, required=True)
    tau.add_argument("--s", type=int, required=True)
    tau.add_argument("--bstar", type=float, required=True)
    tau.add_argument("--sigma-sys2", type=float, required=True)
    tau.set_defaults(func=_cmd_tau_det)
    bounds = asub.add_parser("bounds", help="error-bound trace along one KF-CS run (CSV)")
    bounds.add_argument("--config", type=Path, required=True)
    bounds.add_argument("--trial", type=int, default=0)
    bounds.add_argument("--seed", type=int)
    bounds.add_argument("--out", type=Path)
    bounds.set_defaults(func=_cmd_bounds)

    sim = sub.add_parser("simulate", help="Monte Carlo comparison of the estimators")
    sim.add_argument("--config", type=Path, required=True)
    sim.add_argument("--trials", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", type=Path, help="directory for metrics.csv and manifest.json")
    sim.add_argument("--workers", type=int)
    sim.set_defaults(func=_cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"kfcs: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # includes ConfigError
        print(f"kfcs: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"kfcs: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
