"""
Grid geometry, patch indexing, field storage and run configuration.

Index conventions used throughout the package:

* every level L has its own global integer index space; level 1 spans
  ``[0, mx) x [0, my)`` and level L+1 is ``ratios[L-1]`` times finer;
* a patch stores its cells in an array of shape ``(m, nx + 2g, ny + 2g)``,
  so interior cell ``(i, j)`` lives at ``data[:, i + g, j + g]``;
* the first array axis after the component axis is x.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

BC_TYPES = ("outflow", "periodic")
LIMITERS = ("vanleer", "none")
NUM_EQN = 3


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class InvariantError(RuntimeError):
    """An internal AMR invariant was violated (nesting, dangling table entry, ...)."""


class NumericBlowup(FloatingPointError):
    """A patch update produced non-finite values."""

    def __init__(self, patch_id, step, message="non-finite values after advance"):
        super().__init__(f"patch {patch_id}, step {step}: {message}")
        self.patch_id = patch_id
        self.step = step


@dataclass
class AmrConfig:
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    mx: int = 200
    my: int = 200
    max_levels: int = 3
    ratios: tuple = (2, 2)
    desired_cfl: float = 0.9
    regrid_interval: int = 8
    cutoff: float = 0.7
    max_patch_dim: int = 260
    min_patch_dim: int = 4
    ghost_width: int = 2
    flag_tolerance: float = 0.01
    conservation_fix: bool = True
    limiter: str = "vanleer"
    # x_lower, x_upper, y_lower, y_upper
    bc: tuple = ("outflow", "outflow", "outflow", "outflow")
    t_final: float = 0.5
    K0: float = 1.0
    rho0: float = 1.0
    dt_max: Optional[float] = None
    # ring initial condition
    amplitude: float = 1.0
    ring_radius: float = 0.5
    ring_width: float = 0.06
    center_x: float = 0.5
    center_y: float = 0.5
    background: tuple = (0.0, 0.0, 0.0)
    output_times: tuple = ()
    executor: str = "pipelined"
    merge_policy: str = "merged"
    flux_saving: bool = True
    nesting_margin: int = 1

    def validate(self) -> "AmrConfig":
        if not (isinstance(self.mx, int) and self.mx >= 1):
            raise ConfigError("mx", f"must be an integer >= 1, got {self.mx!r}")
        if not (isinstance(self.my, int) and self.my >= 1):
            raise ConfigError("my", f"must be an integer >= 1, got {self.my!r}")
        if not self.x1 > self.x0:
            raise ConfigError("x1", "x1 must exceed x0")
        if not self.y1 > self.y0:
            raise ConfigError("y1", "y1 must exceed y0")
        if self.max_levels < 1:
            raise ConfigError("max_levels", "must be >= 1")
        if len(self.ratios) < self.max_levels - 1:
            raise ConfigError("ratios", f"need {self.max_levels - 1} refinement ratios")
        if any(int(r) != r or r < 2 for r in self.ratios):
            raise ConfigError("ratios", "refinement ratios must be integers >= 2")
        if not 0.0 < self.desired_cfl <= 1.0:
            raise ConfigError("desired_cfl", "must lie in (0, 1]")
        if self.regrid_interval < 1:
            raise ConfigError("regrid_interval", "must be >= 1")
        if not 0.0 < self.cutoff <= 1.0:
            raise ConfigError("cutoff", "must lie in (0, 1]")
        if self.min_patch_dim < 1 or self.min_patch_dim > self.max_patch_dim:
            raise ConfigError("min_patch_dim", "need 1 <= min_patch_dim <= max_patch_dim")
        if self.ghost_width != 2:
            raise ConfigError("ghost_width", "fixed at 2")
        if self.flag_tolerance < 0:
            raise ConfigError("flag_tolerance", "must be >= 0")
        if self.limiter not in LIMITERS:
            raise ConfigError("limiter", f"one of {LIMITERS}")
        if len(self.bc) != 4 or any(b not in BC_TYPES for b in self.bc):
            raise ConfigError("bc", f"four entries from {BC_TYPES}")
        if (self.bc[0] == "periodic") != (self.bc[1] == "periodic"):
            raise ConfigError("bc", "periodic x boundaries must be paired")
        if (self.bc[2] == "periodic") != (self.bc[3] == "periodic"):
            raise ConfigError("bc", "periodic y boundaries must be paired")
        if self.t_final < 0:
            raise ConfigError("t_final", "must be >= 0")
        if self.K0 <= 0:
            raise ConfigError("K0", "bulk modulus must be positive")
        if self.rho0 <= 0:
            raise ConfigError("rho0", "density must be positive")
        if self.executor not in ("serial", "pipelined"):
            raise ConfigError("executor", "serial or pipelined")
        if self.merge_policy not in ("merged", "unmerged"):
            raise ConfigError("merge_policy", "merged or unmerged")
        if self.nesting_margin < 1:
            raise ConfigError("nesting_margin", "must be >= 1")
        return self

    @property
    def sound_speed(self) -> float:
        return math.sqrt(self.K0 / self.rho0)

    @property
    def periodic(self) -> tuple:
        return (self.bc[0] == "periodic", self.bc[2] == "periodic")

    def replace(self, **changes) -> "AmrConfig":
        return dataclasses.replace(self, **changes)

    def cumulative_ratio(self, level: int) -> int:
        """Refinement of ``level`` relative to level 1."""
        r = 1
        for k in range(level - 1):
            r *= int(self.ratios[k])
        return r

    def level_shape(self, level: int) -> tuple:
        r = self.cumulative_ratio(level)
        return self.mx * r, self.my * r

    def cell_size(self, level: int) -> tuple:
        r = self.cumulative_ratio(level)
        return (self.x1 - self.x0) / (self.mx * r), (self.y1 - self.y0) / (self.my * r)


class Box(NamedTuple):
    """Half-open integer index box ``[i0, i0+nx) x [j0, j0+ny)``."""

    i0: int
    j0: int
    nx: int
    ny: int

    @property
    def i1(self):
        return self.i0 + self.nx

    @property
    def j1(self):
        return self.j0 + self.ny

    @property
    def size(self):
        return self.nx * self.ny

    def refine(self, r: int) -> "Box":
        return Box(self.i0 * r, self.j0 * r, self.nx * r, self.ny * r)

    def coarsen(self, r: int) -> "Box":
        i0, j0 = self.i0 // r, self.j0 // r
        return Box(i0, j0, -(-self.i1 // r) - i0, -(-self.j1 // r) - j0)

    def grow(self, n: int) -> "Box":
        return Box(self.i0 - n, self.j0 - n, self.nx + 2 * n, self.ny + 2 * n)

    def intersect(self, other: "Box") -> Optional["Box"]:
        i0, j0 = max(self.i0, other.i0), max(self.j0, other.j0)
        i1, j1 = min(self.i1, other.i1), min(self.j1, other.j1)
        if i1 <= i0 or j1 <= j0:
            return None
        return Box(i0, j0, i1 - i0, j1 - j0)

    def contains_box(self, other: "Box") -> bool:
        return (self.i0 <= other.i0 and self.j0 <= other.j0
                and other.i1 <= self.i1 and other.j1 <= self.j1)

    def contains(self, i, j):
        return (i >= self.i0) & (i < self.i1) & (j >= self.j0) & (j < self.j1)


class PatchField:
    """m-component cell data with a ghost frame of width ``g``.

    ``storage`` may be supplied (e.g. a memory-pool block viewed as float64);
    otherwise a fresh array is allocated.
    """

    def __init__(self, m: int, nx: int, ny: int, g: int = 2, t: float = 0.0, storage=None):
        self.m, self.nx, self.ny, self.g = m, nx, ny, g
        shape = (m, nx + 2 * g, ny + 2 * g)
        n = m * shape[1] * shape[2]
        if storage is None:
            storage = np.zeros(n)
        if storage.size < n:
            raise ValueError("storage too small for field")
        self.data = storage[:n].reshape(shape)
        self.t = t

    @property
    def interior(self) -> np.ndarray:
        g = self.g
        return self.data[:, g:g + self.nx, g:g + self.ny]

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def copy(self) -> "PatchField":
        out = PatchField(self.m, self.nx, self.ny, self.g, self.t)
        out.data[...] = self.data
        return out


_patch_ids = iter(range(1, 1 << 62))


@dataclass(eq=False)
class Patch:
    level: int
    box: Box
    dx: float
    dy: float
    x0: float
    y0: float
    field: PatchField
    id: int = field(default_factory=lambda: next(_patch_ids))
    # snapshot taken at the start of each level step (time interpolation, step retakes)
    old: Optional[np.ndarray] = None
    t_old: float = 0.0
    # sync bookkeeping; populated by amrwave.sync
    interface: object = None
    coarse_buffer: Optional[np.ndarray] = None
    fix_buffer: Optional[np.ndarray] = None
    lookup: object = None
    blocks: list = field(default_factory=list)

    @property
    def nx(self):
        return self.box.nx

    @property
    def ny(self):
        return self.box.ny

    @property
    def g(self):
        return self.field.g

    @property
    def q(self) -> np.ndarray:
        return self.field.data

    @property
    def t(self):
        return self.field.t

    @property
    def ncells(self):
        return self.box.size

    def snapshot(self) -> None:
        np.copyto(self.old, self.field.data)
        self.t_old = self.field.t

    def restore(self) -> None:
        np.copyto(self.field.data, self.old)
        self.field.t = self.t_old

    def __repr__(self):
        return f"Patch(id={self.id}, level={self.level}, box={tuple(self.box)})"


def cell_center(patch: Patch, i, j):
    """Physical center of local cell ``(i, j)``; ghost indices extrapolate."""
    x = patch.x0 + (patch.box.i0 + np.asarray(i) + 0.5) * patch.dx
    y = patch.y0 + (patch.box.j0 + np.asarray(j) + 0.5) * patch.dy
    if np.ndim(x) == 0 and np.ndim(y) == 0:
        return float(x), float(y)
    return x, y


def extended_centers(patch: Patch):
    """Cell-center coordinate arrays over the whole ghost-extended patch."""
    g = patch.g
    i = np.arange(-g, patch.nx + g)
    j = np.arange(-g, patch.ny + g)
    x, y = cell_center(patch, i, j)
    return np.meshgrid(x, y, indexing="ij")


InitialCondition = Callable[[np.ndarray, np.ndarray], np.ndarray]


class Hierarchy:
    """Per-level patch lists plus per-level clocks and regrid counters."""

    def __init__(self, config: AmrConfig, initial_condition: Optional[InitialCondition] = None,
                 pool=None):
        self.config = config
        self.initial_condition = initial_condition
        self.pool = pool
        n = config.max_levels
        self.levels: list[list[Patch]] = [[] for _ in range(n)]
        self.t = [0.0] * n
        self.dt = [0.0] * n
        self.steps_since_regrid = [0] * n

    @property
    def num_levels(self) -> int:
        return sum(1 for lev in self.levels if lev)

    def patches(self, level: int) -> list:
        return self.levels[level - 1]

    def all_patches(self):
        for lev in self.levels:
            yield from lev

    def ratio(self, level: int) -> int:
        """Refinement ratio between ``level`` and ``level + 1``."""
        return int(self.config.ratios[level - 1])

    def ncells(self, level: Optional[int] = None) -> int:
        if level is not None:
            return sum(p.ncells for p in self.patches(level))
        return sum(p.ncells for p in self.all_patches())

    def make_patch(self, level: int, box: Box, t: float = 0.0) -> Patch:
        cfg = self.config
        dx, dy = cfg.cell_size(level)
        g = cfg.ghost_width
        n = NUM_EQN * (box.nx + 2 * g) * (box.ny + 2 * g)
        blocks = []
        if self.pool is not None:
            arrays = []
            for _ in range(2):
                block = self.pool.acquire(n * 8)
                a = block.as_array(np.float64, n)
                a[:] = 0.0
                arrays.append(a)
                blocks.append(block)
            storage, old = arrays
        else:
            storage, old = np.zeros(n), np.zeros(n)
        pf = PatchField(NUM_EQN, box.nx, box.ny, g, t, storage=storage)
        return Patch(level, box, dx, dy, cfg.x0, cfg.y0, pf, old=old.reshape(pf.data.shape),
                     t_old=t, blocks=blocks)

    def release_patch(self, patch: Patch) -> None:
        if self.pool is not None:
            for block in patch.blocks:
                self.pool.release(block)
        patch.blocks = []

    def apply_initial_condition(self, patch: Patch) -> None:
        if self.initial_condition is None:
            return
        x, y = extended_centers(patch)
        patch.q[...] = self.initial_condition(x, y)


def split_extent(n: int, max_dim: int) -> list:
    """Split ``n`` cells into the fewest near-equal pieces of at most ``max_dim``."""
    k = -(-n // max_dim)
    base, extra = divmod(n, k)
    sizes = [base + (1 if t < extra else 0) for t in range(k)]
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    return list(zip(starts.tolist(), sizes))


def create_hierarchy(config: AmrConfig, initial_condition: Optional[InitialCondition] = None,
                     pool=None) -> Hierarchy:
    """Level-1 hierarchy tiling the domain; finer levels are left to regridding."""
    config.validate()
    h = Hierarchy(config, initial_condition, pool)
    for i0, nx in split_extent(config.mx, config.max_patch_dim):
        for j0, ny in split_extent(config.my, config.max_patch_dim):
            p = h.make_patch(1, Box(i0, j0, nx, ny))
            h.apply_initial_condition(p)
            h.levels[0].append(p)
    return h


def ring_initial_condition(config: AmrConfig) -> InitialCondition:
    """Gaussian pressure ring ``A exp(-((r - r0)/w)^2)`` at rest, plus a constant background."""
    A, r0, w = config.amplitude, config.ring_radius, config.ring_width
    cx, cy = config.center_x, config.center_y
    bg = np.asarray(config.background, dtype=float)

    def ic(x, y):
        r = np.hypot(x - cx, y - cy)
        q = np.empty((NUM_EQN,) + np.shape(x))
        q[0] = A * np.exp(-((r - r0) / w) ** 2) + bg[0]
        q[1] = bg[1]
        q[2] = bg[2]
        return q

    return ic


def composite_sum(h: Hierarchy) -> np.ndarray:
    """Per-component integral of q over level 1 (equal to the composite sum once synced)."""
    dx, dy = h.config.cell_size(1)
    total = np.zeros(NUM_EQN)
    for p in h.patches(1):
        total += p.field.interior.sum(axis=(1, 2)) * dx * dy
    return total


def domain_boxes(config: AmrConfig, level: int) -> Box:
    nx, ny = config.level_shape(level)
    return Box(0, 0, nx, ny)


def patch_boxes(patches: Sequence[Patch]) -> list:
    return [p.box for p in patches]
