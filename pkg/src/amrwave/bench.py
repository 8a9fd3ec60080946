"""
Benchmark driver: config files, the ring benchmark run, the cutoff x regrid
interval sweep, CSV reports and ASCII snapshots.

Config files are flat ``key = value`` lines; ``#`` starts a comment.  Keys
are the :class:`~amrwave.core_types.AmrConfig` field names.  Tuple-valued
keys (``ratios``, ``bc``, ``background``, ``output_times``) take
comma-separated values; a single ``bc`` value applies to all four sides.
Booleans are ``true``/``false``; ``dt_max = none`` leaves it unset.
"""

from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .amr import PHASES, AmrSolver
from .core_types import AmrConfig, Box, ConfigError, Hierarchy, NumericBlowup
from .executor import MemoryPool

_TUPLE_KEYS = {"ratios": int, "bc": str, "background": float, "output_times": float}
_FIELDS = {f.name: f for f in dataclasses.fields(AmrConfig)}


class ConfigParseError(ConfigError):
    def __init__(self, path, lineno: int, key: str, message: str):
        super().__init__(key, f"{path}:{lineno}: {message}")
        self.lineno = lineno


def _convert(key: str, raw: str):
    default = _FIELDS[key].default
    if key in _TUPLE_KEYS:
        kind = _TUPLE_KEYS[key]
        items = [s.strip() for s in raw.split(",") if s.strip()]
        vals = tuple(kind(s) for s in items)
        if key == "bc" and len(vals) == 1:
            vals = vals * 4
        return vals
    if key == "dt_max":
        return None if raw.lower() == "none" else float(raw)
    if isinstance(default, bool):
        low = raw.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true or false, got {raw!r}")
        return low == "true"
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(text: str, path="<config>", base: Optional[AmrConfig] = None) -> AmrConfig:
    """Parse ``key = value`` text into a validated :class:`AmrConfig`."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigParseError(path, lineno, "?", f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigParseError(path, lineno, key, f"unknown key {key!r}")
        if key in values:
            raise ConfigParseError(path, lineno, key, f"duplicate key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigParseError(path, lineno, key, f"bad value {raw!r} ({exc})") from None
    cfg = (base or AmrConfig()).replace(**values)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise ConfigError(exc.key, f"{path}: {exc}") from None


def load_config(path) -> AmrConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("path", f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, path)


def format_config(cfg: AmrConfig) -> str:
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        elif v is None:
            v = "none"
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# snapshots

SNAPSHOT_COLUMNS = ("i", "j", "p", "u", "v")


def write_snapshot(h: Hierarchy, path) -> Path:
    """ASCII snapshot.

    Layout::

        # amrwave snapshot
        time <t>
        levels <number of nonempty levels>
        patches <count>
        patch <level> <i0> <j0> <nx> <ny> <dx> <dy>
        <i> <j> <p> <u> <v>      (nx*ny rows, i slowest; level-global indices)
        ...

    Floats are written with ``repr`` so a read-back is exact.
    """
    path = Path(path)
    patches = [p for lev in h.levels for p in lev]
    try:
        with open(path, "w") as fh:
            fh.write("# amrwave snapshot\n")
            fh.write(f"time {float(h.t[0])!r}\n")
            fh.write(f"levels {h.num_levels}\n")
            fh.write(f"patches {len(patches)}\n")
            for p in patches:
                b = p.box
                fh.write(f"patch {p.level} {b.i0} {b.j0} {b.nx} {b.ny} {float(p.dx)!r} {float(p.dy)!r}\n")
                ii, jj = np.meshgrid(np.arange(b.i0, b.i1), np.arange(b.j0, b.j1), indexing="ij")
                q = p.field.interior
                vals = q.reshape(q.shape[0], -1).T.tolist()  # python floats, so repr is plain
                for i, j, (pv, uv, vv) in zip(ii.ravel().tolist(), jj.ravel().tolist(), vals):
                    fh.write(f"{i} {j} {pv!r} {uv!r} {vv!r}\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write snapshot {path}: {exc.strerror}") from None
    return path


@dataclass
class SnapshotPatch:
    level: int
    box: Box
    dx: float
    dy: float
    q: np.ndarray  # (3, nx, ny)


@dataclass
class Snapshot:
    time: float
    levels: int
    patches: list

    @property
    def ncells(self) -> int:
        return sum(p.box.size for p in self.patches)


def read_snapshot(path) -> Snapshot:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise OSError(exc.errno, f"cannot read snapshot {path}: {exc.strerror}") from None
    it = iter(ln for ln in lines if ln and not ln.startswith("#"))
    t = float(next(it).split()[1])
    levels = int(next(it).split()[1])
    n = int(next(it).split()[1])
    patches = []
    for _ in range(n):
        tok = next(it).split()
        lev, i0, j0, nx, ny = (int(x) for x in tok[1:6])
        dx, dy = float(tok[6]), float(tok[7])
        rows = np.array([[float(x) for x in next(it).split()] for _ in range(nx * ny)])
        q = rows[:, 2:].T.reshape(3, nx, ny) if nx * ny else np.zeros((3, nx, ny))
        patches.append(SnapshotPatch(lev, Box(i0, j0, nx, ny), dx, dy, q))
    return Snapshot(t, levels, patches)


# ---------------------------------------------------------------------------
# reports

REPORT_COLUMNS = (
    "status", "cutoff", "regrid_interval", "steps", "t_final", "total_cells",
    "cells_level", "level_steps", "avg_patches_per_step", "avg_patches_level",
    "conservation_residual", "max_cfl", "launches", "accumulate_launches",
    "accumulate_launches_unmerged", "overlap_fraction", "pool_reservations",
    "pool_acquires", "pool_releases", "pool_high_water", "solution_bytes", "wave_bytes",
) + tuple(f"time_{p}" for p in PHASES) + ("error",)


@dataclass
class RunReport:
    status: str = "ok"
    cutoff: float = 0.0
    regrid_interval: int = 0
    steps: int = 0
    t_final: float = 0.0
    total_cells: int = 0
    cells_level: dict = field(default_factory=dict)
    level_steps: dict = field(default_factory=dict)
    avg_patches_per_step: float = 0.0
    avg_patches_level: dict = field(default_factory=dict)
    conservation_residual: float = 0.0
    max_cfl: float = 0.0
    launches: int = 0
    accumulate_launches: int = 0
    accumulate_launches_unmerged: int = 0
    overlap_fraction: float = 0.0
    pool_reservations: int = 0
    pool_acquires: int = 0
    pool_releases: int = 0
    pool_high_water: int = 0
    solution_bytes: int = 0
    wave_bytes: int = 0
    timers: dict = field(default_factory=dict)
    error: str = ""
    snapshots: list = field(default_factory=list)

    @classmethod
    def from_solver(cls, s: AmrSolver, **extra) -> "RunReport":
        st = s.stats
        ps = s.pool.stats()
        r = cls(cutoff=s.config.cutoff, regrid_interval=s.config.regrid_interval, steps=st.steps,
                t_final=s.t, total_cells=st.total_cells, cells_level=dict(st.cells_advanced),
                level_steps=dict(st.level_steps), avg_patches_per_step=st.avg_patches_per_step,
                avg_patches_level=st.avg_patches_per_level(),
                conservation_residual=s.conservation_residual(), max_cfl=st.max_cfl,
                launches=st.launches, accumulate_launches=st.accumulate_launches,
                accumulate_launches_unmerged=st.accumulate_launches_unmerged,
                overlap_fraction=st.overlap_fraction, pool_reservations=ps["reservations"],
                pool_acquires=ps["acquires"], pool_releases=ps["releases"],
                pool_high_water=ps["high_water"], solution_bytes=st.writes.solution,
                wave_bytes=st.writes.waves, timers=dict(st.timers))
        for k, v in extra.items():
            setattr(r, k, v)
        return r

    def row(self) -> dict:
        out = {}
        for c in REPORT_COLUMNS:
            if c.startswith("time_"):
                out[c] = self.timers.get(c[5:], 0.0)
                continue
            v = getattr(self, c)
            if isinstance(v, dict):
                v = ";".join(f"{k}:{v[k]}" for k in sorted(v))
            out[c] = v
        return out


def write_report(reports: Sequence[RunReport], path) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            w.writeheader()
            for r in reports:
                w.writerow(r.row())
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write report {path}: {exc.strerror}") from None
    return path


# ---------------------------------------------------------------------------
# run / sweep


def run(config, snapshot_dir=None, pool: Optional[MemoryPool] = None, max_steps=None,
        initial_condition=None) -> RunReport:
    """Run the benchmark described by ``config`` (an :class:`AmrConfig` or a path).

    Snapshots are written at each configured output time when
    ``snapshot_dir`` is given.  On a numeric blowup the last good coarse
    state is written to ``blowup.txt`` there and the error re-raised.
    """
    cfg = config if isinstance(config, AmrConfig) else load_config(config)
    cfg.validate()
    snapdir = Path(snapshot_dir) if snapshot_dir is not None else None
    if snapdir is not None:
        snapdir.mkdir(parents=True, exist_ok=True)
    written = []

    def on_output(solver, t):
        if snapdir is not None:
            written.append(write_snapshot(solver.h, snapdir / f"snapshot_{len(written):04d}.txt"))

    solver = AmrSolver(cfg, initial_condition=initial_condition, pool=pool)
    try:
        solver.run(on_output, max_steps=max_steps)
    except NumericBlowup:
        if snapdir is not None:
            solver.restore_last_good()
            write_snapshot(solver.h, snapdir / "blowup.txt")
        raise
    rep = RunReport.from_solver(solver)
    rep.snapshots = written
    rep.solver = solver
    return rep


def sweep(config, cutoffs: Sequence[float], intervals: Sequence[int], max_steps=None,
          runner=None) -> list:
    """One run per (cutoff, K) pair; failed runs give a row with ``status='failed'``."""
    if not cutoffs or not intervals:
        raise ValueError("sweep needs nonempty cutoff and interval lists")
    base = config if isinstance(config, AmrConfig) else load_config(config)
    runner = runner or (lambda c: run(c, max_steps=max_steps))
    rows = []
    for cut in cutoffs:
        for k in intervals:
            t0 = time.perf_counter()
            try:
                cfg = base.replace(cutoff=float(cut), regrid_interval=int(k)).validate()
                rep = runner(cfg)
                rep.__dict__.pop("solver", None)
            except Exception as exc:  # noqa: BLE001 -- a failed run must not stop the sweep
                rep = RunReport(status="failed", cutoff=float(cut), regrid_interval=int(k),
                                error=f"{type(exc).__name__}: {exc}")
                rep.timers = {"other": time.perf_counter() - t0}
            rows.append(rep)
    return rows


def uniform_config(cfg: AmrConfig, level: int) -> AmrConfig:
    """Single-level config at the resolution of ``level`` of ``cfg``."""
    r = cfg.cumulative_ratio(level)
    return cfg.replace(mx=cfg.mx * r, my=cfg.my * r, max_levels=1,
                       max_patch_dim=max(cfg.max_patch_dim, cfg.mx * r, cfg.my * r))


def level1_average(h: Hierarchy, factor: int) -> np.ndarray:
    """Level-1 field of a single-patch hierarchy averaged by ``factor`` in each direction."""
    (p,) = h.patches(1)
    q = p.field.interior
    m, nx, ny = q.shape
    return q.reshape(m, nx // factor, factor, ny // factor, factor).mean(axis=(2, 4))


def composite_level1(h: Hierarchy) -> np.ndarray:
    """Level-1 field assembled from all level-1 patches (already updated from finer levels)."""
    nx, ny = h.config.level_shape(1)
    out = np.zeros((3, nx, ny))
    for p in h.patches(1):
        b = p.box
        out[:, b.i0:b.i1, b.j0:b.j1] = p.field.interior
    return out


def instantaneous_cells(h: Hierarchy) -> int:
    return h.ncells()


__all__ = [
    "ConfigParseError", "RunReport", "Snapshot", "load_config", "parse_config", "format_config",
    "read_snapshot", "run", "sweep", "write_report", "write_snapshot", "uniform_config",
    "level1_average", "composite_level1", "instantaneous_cells",
]
