"""Compare the composite level-1 pressure of an AMR run with a uniform run at the finest resolution."""

import argparse

import numpy as np

from amrwave import bench
from amrwave.amr import AmrSolver


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default="configs/default.cfg")
    ap.add_argument("--t-final", type=float, default=0.2)
    ap.add_argument("--tolerances", default="1e-2,3e-3,1e-3")
    args = ap.parse_args()
    cfg = bench.load_config(args.config).replace(t_final=args.t_final, output_times=())
    top = cfg.max_levels
    ref = AmrSolver(bench.uniform_config(cfg, top))
    ref.run()
    p_ref = bench.level1_average(ref.h, cfg.cumulative_ratio(top))[0]
    dx, dy = cfg.cell_size(1)
    for tol in (float(s) for s in args.tolerances.split(",")):
        s = AmrSolver(cfg.replace(flag_tolerance=tol))
        s.run()
        diff = bench.composite_level1(s.h)[0] - p_ref
        print(f"flag_tolerance {tol:g}: L1(p) {np.abs(diff).sum() * dx * dy:.3e}, "
              f"max {np.abs(diff).max():.3e}, cells advanced {s.stats.total_cells}")


if __name__ == "__main__":
    main()
