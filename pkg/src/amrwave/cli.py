"""Command-line entry point: ``amrwave run <config>`` and ``amrwave sweep <config>``."""

from __future__ import annotations

import argparse
import sys

from . import bench


def _floats(s):
    return [float(x) for x in s.split(",") if x.strip()]


def _ints(s):
    return [int(x) for x in s.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="amrwave", description="AMR acoustics benchmark driver")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="key = value config file")
        p.add_argument("--executor", choices=("serial", "pipelined"))
        p.add_argument("--no-conservation-fix", action="store_true")
        p.add_argument("--report", metavar="CSV", help="write the report table here")
        p.add_argument("--max-steps", type=int, default=None, help="stop after this many coarse steps")

    r = sub.add_parser("run", help="run the benchmark to t_final")
    common(r)
    r.add_argument("--snapshots", metavar="DIR", help="write snapshots at output times here")
    s = sub.add_parser("sweep", help="cutoff x regrid-interval parameter study")
    common(s)
    s.add_argument("--cutoffs", type=_floats, required=True, help="comma-separated cutoffs")
    s.add_argument("--intervals", type=_ints, required=True, help="comma-separated regrid intervals")
    return ap


def _summary(rep) -> str:
    return (f"status={rep.status} cutoff={rep.cutoff} K={rep.regrid_interval} steps={rep.steps} "
            f"t={rep.t_final:.6g} cells={rep.total_cells} patches/step={rep.avg_patches_per_step:.3f} "
            f"residual={rep.conservation_residual:.3e} max_cfl={rep.max_cfl:.4f}"
            + (f" error={rep.error}" if rep.error else ""))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = bench.load_config(args.config)
        changes = {}
        if args.executor:
            changes["executor"] = args.executor
        if args.no_conservation_fix:
            changes["conservation_fix"] = False
        cfg = cfg.replace(**changes).validate()
        if args.command == "run":
            reports = [bench.run(cfg, snapshot_dir=args.snapshots, max_steps=args.max_steps)]
        else:
            if not args.cutoffs or not args.intervals:
                raise ValueError("--cutoffs and --intervals need at least one value each")
            reports = bench.sweep(cfg, args.cutoffs, args.intervals, max_steps=args.max_steps)
        for rep in reports:
            print(_summary(rep))
        if args.report:
            bench.write_report(reports, args.report)
    except Exception as exc:  # noqa: BLE001 -- report any failure on stderr with nonzero exit
        print(f"amrwave: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
