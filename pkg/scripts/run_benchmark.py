"""Run the default ring benchmark and print the report plus per-level patch counts."""

import argparse
import time

from amrwave import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default="configs/default.cfg")
    ap.add_argument("--snapshots", default=None)
    ap.add_argument("--report", default="benchmark.csv")
    args = ap.parse_args()
    t0 = time.perf_counter()
    rep = bench.run(args.config, snapshot_dir=args.snapshots)
    bench.write_report([rep], args.report)
    print(f"{rep.steps} coarse steps in {time.perf_counter() - t0:.1f}s")
    print(f"total cells advanced {rep.total_cells}, avg patches per level {rep.avg_patches_level}")
    print(f"conservation residual {rep.conservation_residual:.2e}, max nu {rep.max_cfl:.3f}")
    print(f"wave/solution bytes {rep.wave_bytes / rep.solution_bytes:.3f}, "
          f"modelled overlap {rep.overlap_fraction:.2f} (synthetic cost model)")
    print("phase seconds:", {k: round(v, 2) for k, v in rep.timers.items()})


if __name__ == "__main__":
    main()
