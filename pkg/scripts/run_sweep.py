"""Cutoff x regrid-interval study on the default problem; writes a CSV and prints the trend table."""

import argparse

from amrwave import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default="configs/default.cfg")
    ap.add_argument("--cutoffs", default="0.5,0.7,0.9")
    ap.add_argument("--intervals", default="2,8,16")
    ap.add_argument("--t-final", type=float, default=None, help="override t_final to shorten runs")
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()
    cfg = bench.load_config(args.config).replace(output_times=())
    if args.t_final is not None:
        cfg = cfg.replace(t_final=args.t_final)
    rows = bench.sweep(cfg, [float(c) for c in args.cutoffs.split(",")],
                       [int(k) for k in args.intervals.split(",")])
    bench.write_report(rows, args.out)
    print(f"{'cutoff':>6} {'K':>3} {'status':>6} {'total cells':>12} {'patches/step':>12}")
    for r in rows:
        print(f"{r.cutoff:6.2f} {r.regrid_interval:3d} {r.status:>6} {r.total_cells:12d} "
              f"{r.avg_patches_per_step:12.2f}")


if __name__ == "__main__":
    main()
