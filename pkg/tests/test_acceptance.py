"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from amrwave import bench
from amrwave.amr import AmrSolver
from amrwave.core_types import AmrConfig
from amrwave.executor import (COMPUTE, TRANSFER_IN, TRANSFER_OUT, CostModel, DeviceTask,
                              Stream, simulate)
from amrwave.riemann import Medium, solve_normal
from test_executor import pool_stress

DEFAULT = "configs/default.cfg"


def verdict(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def default_config(**kw):
    from pathlib import Path
    path = Path(__file__).resolve().parent.parent / DEFAULT
    return bench.load_config(path).replace(output_times=(), **kw)


@pytest.fixture(scope="module")
def default_run():
    """The full default benchmark, stepped by hand to audit pool reservations per step."""
    s = AmrSolver(default_config())
    reservations = [s.pool.reservations]
    while s.t < s.config.t_final - 1e-12:
        s.step(s.config.t_final)
        reservations.append(s.pool.reservations)
    return s, reservations


def test_criterion_01_riemann_consistency():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for d in ("x", "y"):
        for _ in range(5):
            med = Medium(rng.uniform(0.2, 5.0), rng.uniform(0.2, 5.0))
            ql = rng.normal(size=(3, 1000)) * rng.uniform(0.1, 10)
            qr = rng.normal(size=(3, 1000)) * rng.uniform(0.1, 10)
            rs = solve_normal(d, ql, qr, med)
            df = med.flux(d, qr) - med.flux(d, ql)
            err = np.linalg.norm(rs.amdq + rs.apdq - df, axis=0) / np.linalg.norm(df, axis=0)
            worst = max(worst, err.max())
    dt = time.perf_counter() - t0
    verdict(1, worst <= 1e-13 and dt < 1.0, f"max rel err {worst:.2e} over 1e4 pairs in {dt:.2f}s")


def test_criterion_02_single_patch_conservation():
    cfg = AmrConfig(mx=64, my=64, max_levels=1, bc=("periodic",) * 4, ring_radius=0.3,
                    background=(1.0, 0.5, -0.25), t_final=100.0)
    t0 = time.perf_counter()
    s = AmrSolver(cfg)
    s.run(max_steps=200)
    dt = time.perf_counter() - t0
    res = s.conservation_residual()
    verdict(2, s.stats.steps == 200 and res <= 1e-12 and dt < 5.0,
            f"residual {res:.2e} after {s.stats.steps} steps in {dt:.1f}s")


def test_criterion_03_amr_conservation():
    cfg = AmrConfig(mx=100, my=100, max_levels=3, ratios=(2, 2), bc=("periodic",) * 4,
                    ring_radius=0.3, background=(1.0, 0.5, -0.25), t_final=100.0)
    out = {}
    for fix in (True, False):
        t0 = time.perf_counter()
        s = AmrSolver(cfg.replace(conservation_fix=fix))
        s.run(max_steps=50)
        out[fix] = (s.conservation_residual(), time.perf_counter() - t0, s.stats.steps)
    (on, t_on, n_on), (off, t_off, n_off) = out[True], out[False]
    ok = n_on == n_off == 50 and on <= 1e-12 and off >= 1e3 * on and max(t_on, t_off) < 60
    verdict(3, ok, f"residual {on:.2e} with fix, {off:.2e} without ({t_on:.0f}s, {t_off:.0f}s)")


def test_criterion_04_cfl_guard(default_run):
    s, _ = default_run
    hist = s.stats.cfl_history
    first = 1 + 2 + 4  # level steps belonging to the first coarse step
    nu_all = max(nu for _, nu in hist)
    nu_later = max(nu for _, nu in hist[first:])
    ok = nu_all <= 1.0 and nu_later <= s.config.desired_cfl + 0.05
    verdict(4, ok, f"max nu {nu_all:.4f}, after first step {nu_later:.4f} over {s.stats.steps} steps")


def standing_wave_error(n, t_final=0.5):
    """L1 pressure error of a periodic standing wave, initialised and compared as exact cell averages."""
    a = b = 2 * np.pi
    h = 1.0 / n
    avg = (np.sin(a * h / 2) / (a * h / 2)) * (np.sin(b * h / 2) / (b * h / 2))
    omega = np.hypot(a, b)  # c = 1

    def ic(x, y):
        q = np.zeros((3,) + np.shape(x))
        q[0] = avg * np.cos(a * x) * np.cos(b * y)
        return q

    cfg = AmrConfig(mx=n, my=n, max_levels=1, bc=("periodic",) * 4, limiter="none",
                    t_final=t_final, max_patch_dim=max(260, n))
    s = AmrSolver(cfg, initial_condition=ic)
    s.run()
    (p,) = s.h.patches(1)
    x = (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(x, x, indexing="ij")
    exact = avg * np.cos(a * X) * np.cos(b * Y) * np.cos(omega * s.t)
    return np.abs(p.field.interior[0] - exact).sum() * h * h


def test_criterion_05_convergence():
    t0 = time.perf_counter()
    errs = [standing_wave_error(n) for n in (32, 64, 128)]
    dt = time.perf_counter() - t0
    ratios = [errs[k] / errs[k + 1] for k in range(2)]
    verdict(5, min(ratios) >= 3.5 and dt < 60,
            f"L1 errors {', '.join(f'{e:.3e}' for e in errs)}; ratios {ratios[0]:.2f}, {ratios[1]:.2f} ({dt:.0f}s)")


def test_criterion_06_amr_accuracy():
    cfg = default_config(t_final=0.2, flag_tolerance=1e-3)
    t0 = time.perf_counter()
    ref = AmrSolver(bench.uniform_config(cfg, 3))
    ref.run()
    s = AmrSolver(cfg)
    s.run()
    dt = time.perf_counter() - t0
    dx, dy = cfg.cell_size(1)
    diff = bench.composite_level1(s.h)[0] - bench.level1_average(ref.h, cfg.cumulative_ratio(3))[0]
    l1 = np.abs(diff).sum() * dx * dy
    verdict(6, l1 <= 1e-3 and dt < 300, f"L1(p) difference {l1:.2e} vs uniform reference ({dt:.0f}s)")


def test_criterion_07_sweep_trends():
    cfg = default_config(t_final=0.1)
    t0 = time.perf_counter()
    by_cut = bench.sweep(cfg, [0.5, 0.7, 0.9], [8])
    by_k = bench.sweep(cfg, [0.7], [2, 16])
    dt = time.perf_counter() - t0
    assert all(r.status == "ok" for r in by_cut + by_k), [r.error for r in by_cut + by_k]
    cells = [r.total_cells for r in by_cut]
    patches = [r.avg_patches_per_step for r in by_cut]
    k_cells = [by_k[0].total_cells, by_cut[1].total_cells, by_k[1].total_cells]
    ok = (all(a >= b for a, b in zip(cells, cells[1:]))
          and all(a <= b for a, b in zip(patches, patches[1:]))
          and all(a <= b for a, b in zip(k_cells, k_cells[1:])) and dt < 900)
    verdict(7, ok, f"cells by cutoff {cells}; patches/step {[round(p, 1) for p in patches]}; "
                   f"cells by K {k_cells} ({dt:.0f}s)")


def test_criterion_08_merged_launches():
    cfg = default_config()
    runs = {}
    for policy in ("merged", "unmerged"):
        s = AmrSolver(cfg.replace(merge_policy=policy))
        s.run(max_steps=5)  # crosses a level-2 regrid (K=8 level-2 steps)
        runs[policy] = s
    m, u = runs["merged"], runs["unmerged"]
    counts_ok = all(n == 2 for _, n, _ in m.stats.level_step_launches) and all(
        n == 2 * p for _, n, p in u.stats.level_step_launches)
    same = all(x.box == y.box and np.array_equal(x.field.interior, y.field.interior)
               for x, y in zip(m.h.all_patches(), u.h.all_patches()))
    same &= len(list(m.h.all_patches())) == len(list(u.h.all_patches()))
    steps = len(m.stats.level_step_launches)
    verdict(8, counts_ok and same,
            f"{steps} level steps: merged {m.stats.accumulate_launches} vs unmerged "
            f"{u.stats.accumulate_launches} accumulate launches; fields identical={same}")


def _pipeline(n, T=1.0):
    tasks = []
    for s in range(n):
        st = Stream(s)
        for kind in (TRANSFER_IN, COMPUTE, TRANSFER_OUT):
            tasks.append(st.enqueue(DeviceTask(kind, cost=T)))
    return tasks


def test_criterion_09_pipeline_overlap():
    model = CostModel(launch_overhead=0.0)
    T = 1.0
    span4 = simulate(_pipeline(4, T), model).span
    faster = all(simulate(_pipeline(n), model).span < simulate(_pipeline(n), model, "serial").span
                 for n in range(2, 9))
    verdict(9, span4 == 6 * T and faster, f"4-patch span {span4}T; pipelined < serial for 2..8 patches: {faster}")


def test_criterion_10_memory_pool(default_run):
    s, res = default_run
    warm = len(res) - 1 - 100
    new = res[-1] - res[warm] if warm >= 0 else None
    t0 = time.perf_counter()
    _, collisions = pool_stress(workers=8, ops=100_000)
    verdict(10, new == 0 and not collisions,
            f"{new} reservations over the last 100 of {len(res) - 1} steps; "
            f"{len(collisions)} collisions in 1e5-op stress ({time.perf_counter() - t0:.0f}s)")


def test_criterion_11_write_bytes(default_run):
    s, _ = default_run
    ratio = s.stats.writes.ratio
    verdict(11, abs(ratio - 4.0) <= 0.4, f"wave/solution write ratio {ratio:.3f}")
