"""
Recursive level-by-level AMR driver: regrid, ghost fill, patch advance via the
executor, updating and the conservation fix, with adaptive time steps.
"""

from __future__ import annotations

import os
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import regrid as rg
from . import sync
from .core_types import (AmrConfig, Hierarchy, NumericBlowup, composite_sum, create_hierarchy,
                         ring_initial_condition)
from .executor import (CostModel, DeviceTimeline, MemoryPool, PatchWork, WriteCounter,
                       accumulate_task_count, plan_level_launches, run_level)
from .riemann import Medium
from .stepper import CflAbort, StepController, advance_patch, reduce_patch_cfl

PHASES = ("advance", "ghost_fill", "regrid", "updating", "other")


@dataclass
class RunStats:
    steps: int = 0
    level_steps: dict = field(default_factory=lambda: defaultdict(int))
    cells_advanced: dict = field(default_factory=lambda: defaultdict(int))
    patches_advanced: dict = field(default_factory=lambda: defaultdict(int))
    cfl_history: list = field(default_factory=list)  # (level, nu) for accepted level steps
    rejected_steps: int = 0
    accumulate_launches: int = 0
    accumulate_launches_unmerged: int = 0
    timers: dict = field(default_factory=lambda: dict.fromkeys(PHASES, 0.0))
    writes: WriteCounter = field(default_factory=WriteCounter)
    level_step_launches: list = field(default_factory=list)  # (level, accumulate launches, patches)
    # modelled device timeline, aggregated over level steps
    launches: int = 0
    modelled_span: float = 0.0
    transfer_time: float = 0.0
    overlapped_transfer: float = 0.0
    last_timeline: Optional[DeviceTimeline] = None

    def add_timeline(self, tl: DeviceTimeline) -> None:
        self.launches += tl.launch_count
        self.modelled_span += tl.span
        ov, tot = tl.overlap_totals()
        self.overlapped_transfer += ov
        self.transfer_time += tot
        self.last_timeline = tl

    @property
    def overlap_fraction(self) -> float:
        return self.overlapped_transfer / self.transfer_time if self.transfer_time else 0.0

    @property
    def total_cells(self) -> int:
        return sum(self.cells_advanced.values())

    @property
    def avg_patches_per_step(self) -> float:
        n = sum(self.level_steps.values())
        return sum(self.patches_advanced.values()) / n if n else 0.0

    def avg_patches_per_level(self) -> dict:
        return {L: self.patches_advanced[L] / n for L, n in self.level_steps.items() if n}

    @property
    def max_cfl(self) -> float:
        return max((nu for _, nu in self.cfl_history), default=0.0)


class AmrSolver:
    """Owns a hierarchy and advances it to ``t_final``.

    ``on_output(solver, t)`` is called at every configured output time
    (and at t=0 when 0 is listed).
    """

    def __init__(self, config: AmrConfig, initial_condition=None, pool: Optional[MemoryPool] = None,
                 cost_model: Optional[CostModel] = None, workers: Optional[int] = None):
        config.validate()
        self.config = config
        self.medium = Medium(config.K0, config.rho0)
        self.pool = pool if pool is not None else MemoryPool()
        self.cost_model = cost_model or CostModel()
        self.workers = workers or max(1, min(4, os.cpu_count() or 1))
        ic = initial_condition or ring_initial_condition(config)
        self.stats = RunStats()
        t0 = time.perf_counter()
        self.h: Hierarchy = create_hierarchy(config, ic, self.pool)
        for _ in range(config.max_levels - 1):
            rg.regrid(self.h, 1, init=True)
        # coarse cells under finer patches start as averages of their children
        for L in range(config.max_levels, 1, -1):
            if self.h.patches(L):
                sync.update_level(self.h, L)
        self.stats.timers["regrid"] += time.perf_counter() - t0
        self.initial_sum = composite_sum(self.h)
        dx, dy = config.cell_size(1)
        self.dt = config.desired_cfl * min(dx, dy) / config.sound_speed
        self.dt_max = config.dt_max or 0.1 * max(config.x1 - config.x0, config.y1 - config.y0) / config.sound_speed
        self.controller = StepController(config.desired_cfl)
        self.step_index = 0

    @property
    def t(self) -> float:
        return self.h.t[0]

    # ------------------------------------------------------------------
    def _level_work(self, L: int, dt: float, cfl: dict, results: list):
        cfg = self.config
        h = self.h
        fix = cfg.conservation_fix
        coarse_dx = coarse_dy = None
        dt_c = dt  # coarse step length, used by the fine-side fix terms
        if L > 1:
            coarse_dx, coarse_dy = cfg.cell_size(L - 1)
            dt_c = dt * h.ratio(L - 1)
        work = []
        for p in h.patches(L):
            edges = {}
            has_fine_itf = fix and L > 1 and p.interface is not None
            if has_fine_itf:
                for d, e in sync.fine_interface_edges(p).items():
                    edges[("fine", d)] = e
            if fix and p.lookup is not None:
                for d, e in sync.coarse_interface_edges(p).items():
                    edges[("coarse", d)] = e
            box = {}

            def c1(p=p):
                sync.accumulate_c1(p, dt_c, coarse_dx, coarse_dy, self.medium)

            def adv(p=p, edges=edges, box=box):
                res = advance_patch(p, dt, self.medium, cfg.limiter, edges or None,
                                    cfg.flux_saving, self.step_index)
                cfl[p.id] = res.cfl
                box["res"] = res
                results.append((p.id, res.solution_bytes, res.wave_bytes))

            def acc_fine(p=p, box=box):
                recs = box["res"].records
                sync.accumulate_fine_side(p, {k[1]: v for k, v in recs.items() if k[0] == "fine"},
                                          dt_c, coarse_dx, coarse_dy)

            def acc_coarse(p=p, box=box):
                recs = box["res"].records
                sync.accumulate_coarse_side(p, {k[1]: v for k, v in recs.items() if k[0] == "coarse"}, dt)

            nbytes = p.field.nbytes
            work.append(PatchWork(p.id, p.ncells, 2 * (p.nx + p.ny), nbytes, nbytes + 8,
                                  c1=c1 if has_fine_itf else None, advance=adv,
                                  accumulate_fine=acc_fine if has_fine_itf else None,
                                  accumulate_coarse=acc_coarse if fix and p.lookup is not None else None))
        return work

    def _run_level_tasks(self, L: int, dt: float):
        cfg = self.config
        cfl, results = {}, []
        work = self._level_work(L, dt, cfl, results)
        tasks = plan_level_launches(work, cfg.merge_policy, with_c1=L > 1 and cfg.conservation_fix)
        t0 = time.perf_counter()
        try:
            tl = run_level(tasks, self.cost_model, cfg.executor, self.workers)
        except NumericBlowup:
            self.stats.timers["advance"] += time.perf_counter() - t0
            raise
        self.stats.timers["advance"] += time.perf_counter() - t0
        nu = reduce_patch_cfl([cfl[k] for k in sorted(cfl)])
        return nu, tasks, tl, results

    def advance_level(self, L: int, dt: float) -> None:
        cfg = self.config
        h = self.h
        st = self.stats
        if L < cfg.max_levels and h.steps_since_regrid[L - 1] >= cfg.regrid_interval:
            t0 = time.perf_counter()
            rg.regrid(h, L)
            h.steps_since_regrid[L - 1] = 0
            st.timers["regrid"] += time.perf_counter() - t0

        patches = h.patches(L)
        while True:
            t0 = time.perf_counter()
            for p in patches:
                p.snapshot()
            sync.save_coarse_cells(h, L)
            st.timers["other"] += time.perf_counter() - t0
            t0 = time.perf_counter()
            sync.fill_level_ghosts(h, L)
            st.timers["ghost_fill"] += time.perf_counter() - t0
            nu, tasks, tl, results = self._run_level_tasks(L, dt)
            accepted, retry = self.controller.decide(nu, dt)
            if accepted:
                break
            st.rejected_steps += 1
            if L > 1:
                raise CflAbort(f"CFL {nu:.4g} > 1 on level {L}; finer levels follow the level-1 step")
            for p in patches:
                p.restore()
            dt = retry
            self.dt = dt

        h.t[L - 1] += dt
        h.dt[L - 1] = dt
        h.steps_since_regrid[L - 1] += 1
        st.level_steps[L] += 1
        st.cells_advanced[L] += h.ncells(L)
        st.patches_advanced[L] += len(patches)
        st.cfl_history.append((L, nu))
        n_acc = accumulate_task_count(tasks)
        st.accumulate_launches += n_acc
        st.accumulate_launches_unmerged += 2 * len(patches)
        st.level_step_launches.append((L, n_acc, len(patches)))
        st.add_timeline(tl)
        for _, sb, wb in sorted(results):
            st.writes.add(sb, wb)

        if L < cfg.max_levels and h.patches(L + 1):
            R = h.ratio(L)
            for _ in range(R):
                self.advance_level(L + 1, dt / R)
            t0 = time.perf_counter()
            sync.update_level(h, L + 1)
            if cfg.conservation_fix:
                sync.apply_conservation_fix(h, L + 1)
            st.timers["updating"] += time.perf_counter() - t0
        self.last_level_nu = nu

    # ------------------------------------------------------------------
    def _next_dt(self, dt_taken: float) -> float:
        nus = [nu for L, nu in self.stats.cfl_history[-self._level_steps_this_step:]]
        nu = max(nus) if nus else 0.0
        if nu <= 0.0:
            return self.dt_max
        return min(self.dt_max, dt_taken * self.config.desired_cfl / nu)

    def step(self, t_stop: float) -> float:
        """One coarse step, clipped so as not to pass ``t_stop``."""
        dt = self.dt
        if self.t + dt >= t_stop - 1e-12 * max(1.0, t_stop):
            dt = t_stop - self.t
        before = len(self.stats.cfl_history)
        self.advance_level(1, dt)
        dt_taken = self.h.dt[0]
        self._level_steps_this_step = len(self.stats.cfl_history) - before
        # keep time exactly on t_stop when the step was not shortened by a retake
        if dt_taken == dt and abs(self.t - t_stop) < 1e-12 * max(1.0, t_stop):
            for L in range(1, self.config.max_levels + 1):
                self.h.t[L - 1] = t_stop
                for p in self.h.patches(L):
                    p.field.t = t_stop
        self.dt = self._next_dt(dt_taken)
        self.stats.steps += 1
        self.step_index += 1
        return dt_taken

    def run(self, on_output: Optional[Callable] = None, max_steps: Optional[int] = None):
        cfg = self.config
        outs = sorted(t for t in cfg.output_times if 0.0 <= t <= cfg.t_final)
        stops = sorted(set([t for t in outs if t > 0] + [cfg.t_final]))
        if on_output and 0.0 in outs:
            on_output(self, 0.0)
        for stop in stops:
            while self.t < stop - 1e-12 * max(1.0, stop):
                if max_steps is not None and self.stats.steps >= max_steps:
                    return self.stats
                self.step(stop)
            if on_output and stop in outs and stop > 0:
                on_output(self, stop)
        return self.stats

    # ------------------------------------------------------------------
    def conservation_residual(self) -> float:
        """Largest relative change of the composite integral over components with a nonzero start."""
        now = composite_sum(self.h)
        ref = self.initial_sum
        nz = np.abs(ref) > 0
        if not nz.any():
            return float(np.max(np.abs(now - ref)))
        return float(np.max(np.abs(now[nz] - ref[nz]) / np.abs(ref[nz])))

    def conservation_drift(self) -> np.ndarray:
        return composite_sum(self.h) - self.initial_sum

    def restore_last_good(self) -> None:
        """Roll level 1 back to the start of the current coarse step and drop finer levels."""
        for p in self.h.patches(1):
            p.restore()
        self.h.t[0] = self.h.patches(1)[0].t if self.h.patches(1) else self.h.t[0]
        for L in range(2, self.config.max_levels + 1):
            for p in self.h.patches(L):
                self.h.release_patch(p)
            self.h.levels[L - 1] = []
