"""
Flagging, flag buffering, Berger-Rigoutsos clustering and fine-level rebuild.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core_types import Box, Hierarchy, InvariantError, Patch
from . import sync


@dataclass
class FlagField:
    """Boolean flags over a rectangular region of a level's index space."""

    mask: np.ndarray
    origin: tuple = (0, 0)

    def cells(self) -> set:
        ii, jj = np.nonzero(self.mask)
        return set(zip((ii + self.origin[0]).tolist(), (jj + self.origin[1]).tolist()))

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class ClusterBox:
    box: Box
    efficiency: float


def flag_cells(patch: Patch, tolerance: float) -> FlagField:
    """Flag cells whose first component jumps by more than ``tolerance`` to an edge neighbour.

    Ghost cells must be filled.
    """
    g = patch.g
    q = patch.q[0]
    c = q[g:g + patch.nx, g:g + patch.ny]
    d = np.abs(q[g + 1:g + 1 + patch.nx, g:g + patch.ny] - c)
    d = np.maximum(d, np.abs(q[g - 1:g - 1 + patch.nx, g:g + patch.ny] - c))
    d = np.maximum(d, np.abs(q[g:g + patch.nx, g + 1:g + 1 + patch.ny] - c))
    d = np.maximum(d, np.abs(q[g:g + patch.nx, g - 1:g - 1 + patch.ny] - c))
    return FlagField(d > tolerance, (patch.box.i0, patch.box.j0))


def _shift_or(mask, s, axis, periodic):
    if periodic:
        return np.roll(mask, s, axis=axis)
    out = np.zeros_like(mask)
    n = mask.shape[axis]
    if abs(s) >= n:
        return out
    src = [slice(None)] * 2
    dst = [slice(None)] * 2
    if s > 0:
        dst[axis], src[axis] = slice(s, None), slice(None, n - s)
    else:
        dst[axis], src[axis] = slice(None, n + s), slice(-s, None)
    out[tuple(dst)] = mask[tuple(src)]
    return out


def dilate(mask: np.ndarray, b: int, periodic=(False, False)) -> np.ndarray:
    """Chebyshev (square) dilation by ``b`` cells, clipped or wrapped at the array edge."""
    out = mask.copy()
    for axis in (0, 1):
        acc = out.copy()
        for s in range(1, b + 1):
            acc |= _shift_or(out, s, axis, periodic[axis])
            acc |= _shift_or(out, -s, axis, periodic[axis])
        out = acc
    return out


def erode(mask: np.ndarray, b: int, periodic=(False, False)) -> np.ndarray:
    """Square erosion; cells beyond a non-periodic edge count as inside."""
    pad = [(0, 0), (0, 0)]
    m = mask
    for axis in (0, 1):
        if not periodic[axis]:
            pad[axis] = (b, b)
    m = np.pad(mask, pad, mode="edge") if b else mask
    for axis in (0, 1):
        if not periodic[axis] and b:
            sl = [slice(None)] * 2
            sl[axis] = slice(0, b)
            m[tuple(sl)] = True
            sl[axis] = slice(m.shape[axis] - b, None)
            m[tuple(sl)] = True
    out = ~dilate(~m, b, periodic)
    return out[pad[0][0]:out.shape[0] - pad[0][1], pad[1][0]:out.shape[1] - pad[1][1]]


def buffer_flags(flags: FlagField, b: int, periodic=(False, False)) -> FlagField:
    if b < 0:
        raise ValueError("buffer width must be >= 0")
    return FlagField(dilate(flags.mask, b, periodic), flags.origin)


def _bounding(mask):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return rows[0], rows[-1] + 1, cols[0], cols[-1] + 1


def _pick_closest(cands, center):
    """Candidate closest to ``center``; ties go to the lower index."""
    best = None
    for c in cands:
        key = (abs(c - center), c)
        if best is None or key < best[0]:
            best = (key, c)
    return best[1]


def _find_cut(sub, min_dim, forced):
    """Split position ``(axis, index)`` for a box whose flags are ``sub``."""
    nx, ny = sub.shape
    sigs = (sub.sum(axis=1), sub.sum(axis=0))
    # holes in the signature
    best = None
    for axis in (0, 1):
        sig = sigs[axis]
        zeros = np.flatnonzero(sig == 0)
        if zeros.size:
            z = _pick_closest(zeros.tolist(), (sig.size - 1) / 2.0)
            key = (abs(z - (sig.size - 1) / 2.0), axis)
            if best is None or key < best[0]:
                best = (key, (axis, int(z)))
    if best is not None:
        return best[1]
    # strongest inflection of the second difference
    best = None
    for axis in (0, 1):
        sig = sigs[axis].astype(float)
        n = sig.size
        if n < 4:
            continue
        lap = sig[:-2] - 2.0 * sig[1:-1] + sig[2:]
        for k in range(lap.size - 1):
            if lap[k] * lap[k + 1] < 0 or (lap[k] == 0) != (lap[k + 1] == 0):
                cut = k + 2
                lo = min_dim if not forced else 1
                if cut < lo or n - cut < lo:
                    continue
                strength = abs(lap[k + 1] - lap[k])
                key = (-strength, abs(cut - n / 2.0), axis, cut)
                if best is None or key < best[0]:
                    best = (key, (axis, cut))
    if best is not None:
        return best[1]
    axis = 0 if nx >= ny else 1
    n = sub.shape[axis]
    if n < 2:
        axis = 1 - axis
        n = sub.shape[axis]
    return axis, n // 2


def cluster_flags(flags, cutoff: float, max_patch_dim: int, min_patch_dim: int = 1,
                  allowed: Optional[np.ndarray] = None) -> list:
    """Berger-Rigoutsos clustering of a flag mask into rectangular boxes.

    ``flags`` is a :class:`FlagField` or a 2D boolean array.  Boxes are
    returned in the flag field's index frame.  ``allowed`` (same shape as the
    mask) restricts boxes to lie entirely inside it; flagged cells must be
    allowed.
    """
    if not 0.0 < cutoff <= 1.0:
        raise ValueError("cutoff must lie in (0, 1]")
    if isinstance(flags, FlagField):
        mask, origin = flags.mask, flags.origin
    else:
        mask, origin = np.asarray(flags, dtype=bool), (0, 0)
    if allowed is not None and np.any(mask & ~allowed):
        raise ValueError("flagged cells outside the allowed region")
    out = []
    stack = [(0, mask.shape[0], 0, mask.shape[1])]
    while stack:
        a0, a1, b0, b1 = stack.pop()
        sub = mask[a0:a1, b0:b1]
        if not sub.any():
            continue
        r0, r1, c0, c1 = _bounding(sub)
        a0, a1, b0, b1 = a0 + r0, a0 + r1, b0 + c0, b0 + c1
        sub = mask[a0:a1, b0:b1]
        nx, ny = sub.shape
        eff = float(sub.sum()) / (nx * ny)
        fits = nx <= max_patch_dim and ny <= max_patch_dim
        inside = allowed is None or bool(allowed[a0:a1, b0:b1].all())
        small = nx < 2 * min_patch_dim and ny < 2 * min_patch_dim
        if fits and inside and (eff >= cutoff or small or (nx == 1 and ny == 1)):
            out.append(ClusterBox(Box(int(a0 + origin[0]), int(b0 + origin[1]), int(nx), int(ny)), eff))
            continue
        forced = not (fits and inside)
        axis, cut = _find_cut(sub, min_patch_dim, forced)
        if axis == 0:
            pieces = [(a0 + cut, a1, b0, b1), (a0, a0 + cut, b0, b1)]
        else:
            pieces = [(a0, a1, b0 + cut, b1), (a0, a1, b0, b0 + cut)]
        # pushed high piece first so the low piece is processed first
        stack.extend(pieces)
    return out


# ---------------------------------------------------------------------------
# level rebuild


def level_mask(h: Hierarchy, level: int) -> np.ndarray:
    shape = h.config.level_shape(level)
    m = np.zeros(shape, dtype=bool)
    for p in h.patches(level):
        b = p.box
        m[b.i0:b.i1, b.j0:b.j1] = True
    return m


def refine_mask(mask: np.ndarray, r: int) -> np.ndarray:
    return np.repeat(np.repeat(mask, r, axis=0), r, axis=1)


def coarsen_mask(mask: np.ndarray, r: int) -> np.ndarray:
    nx, ny = mask.shape
    return mask.reshape(nx // r, r, ny // r, r).any(axis=(1, 3))


def level_flags(h: Hierarchy, level: int, tolerance: float) -> np.ndarray:
    shape = h.config.level_shape(level)
    m = np.zeros(shape, dtype=bool)
    for p in h.patches(level):
        ff = flag_cells(p, tolerance)
        b = p.box
        m[b.i0:b.i1, b.j0:b.j1] |= ff.mask
    return m


def allowed_regions(h: Hierarchy, base: int) -> dict:
    """Cells of each level ``>= base`` that may be flagged without breaking nesting."""
    cfg = h.config
    per = cfg.periodic
    margin = cfg.nesting_margin
    allowed = {base: erode(level_mask(h, base), margin, per)}
    for lev in range(base + 1, cfg.max_levels):
        allowed[lev] = erode(refine_mask(allowed[lev - 1], h.ratio(lev - 1)), margin, per)
    return allowed


def _new_patch(h: Hierarchy, level: int, box: Box, t: float, old: list, init: bool) -> Patch:
    p = h.make_patch(level, box, t)
    if init and h.initial_condition is not None:
        h.apply_initial_condition(p)
        return p
    g = p.g
    ii, jj = np.meshgrid(np.arange(box.i0, box.i1), np.arange(box.j0, box.j1), indexing="ij")
    vals = sync.interpolate_from_coarse(h, level, ii.ravel(), jj.ravel())
    p.field.interior[...] = vals.reshape(p.q.shape[0], box.nx, box.ny)
    for o in old:
        ov = o.box.intersect(box)
        if ov is None:
            continue
        src = o.q[:, ov.i0 - o.box.i0 + g:ov.i1 - o.box.i0 + g, ov.j0 - o.box.j0 + g:ov.j1 - o.box.j0 + g]
        p.q[:, ov.i0 - box.i0 + g:ov.i1 - box.i0 + g, ov.j0 - box.j0 + g:ov.j1 - box.j0 + g] = src
    return p


def check_nesting(h: Hierarchy) -> None:
    cfg = h.config
    for lev in range(2, cfg.max_levels + 1):
        fine = h.patches(lev)
        if not fine:
            continue
        R = h.ratio(lev - 1)
        ok = erode(level_mask(h, lev - 1), cfg.nesting_margin, cfg.periodic)
        for p in fine:
            cb = p.box.coarsen(R)
            if not ok[cb.i0:cb.i1, cb.j0:cb.j1].all():
                raise InvariantError(f"{p} is not properly nested in level {lev - 1}")


def regrid(h: Hierarchy, base: int, init: bool = False) -> Hierarchy:
    """Rebuild every level finer than ``base`` from flags on the current data.

    With ``init=True`` new patches are filled from the initial condition
    instead of by copy/interpolation.
    """
    cfg = h.config
    per = cfg.periodic
    t = h.t[base - 1]
    top = cfg.max_levels - 1  # deepest level that can be flagged
    if base > top:
        return h
    allowed = allowed_regions(h, base)
    for lev in range(base, top + 1):
        if h.patches(lev):
            sync.fill_level_ghosts(h, lev)

    new_boxes = {}
    for lev in range(top, base - 1, -1):
        shape = cfg.level_shape(lev)
        flags = np.zeros(shape, dtype=bool)
        if h.patches(lev):
            flags = level_flags(h, lev, cfg.flag_tolerance)
            flags = dilate(flags, cfg.regrid_interval, per)
            flags &= allowed[lev]
        finer = new_boxes.get(lev + 2, [])
        if finer:
            R1 = h.ratio(lev + 1)
            m = np.zeros(cfg.level_shape(lev + 1), dtype=bool)
            for b in finer:
                cb = b.coarsen(R1)
                m[cb.i0:cb.i1, cb.j0:cb.j1] = True
            need = coarsen_mask(dilate(m, cfg.nesting_margin, per), h.ratio(lev))
            if np.any(need & ~allowed[lev]):
                raise InvariantError(f"level {lev + 2} boxes cannot be nested in level {lev + 1}")
            flags |= need
        R = h.ratio(lev)
        boxes = cluster_flags(flags, cfg.cutoff, max(1, cfg.max_patch_dim // R),
                              max(1, -(-cfg.min_patch_dim // R)), allowed[lev])
        new_boxes[lev + 1] = [cb.box.refine(R) for cb in boxes]

    for lev in range(base + 1, cfg.max_levels + 1):
        old = h.patches(lev)
        boxes = new_boxes.get(lev, [])
        if not h.patches(lev - 1):
            boxes = []
        new = [_new_patch(h, lev, b, t, old, init) for b in boxes]
        for o in old:
            h.release_patch(o)
        h.levels[lev - 1] = new
        h.t[lev - 1] = t
        h.steps_since_regrid[lev - 1] = 0
    check_nesting(h)
    for lev in range(base + 1, cfg.max_levels + 1):
        if h.patches(lev):
            sync.build_sync_structures(h, lev)
        else:
            sync.clear_sync_structures(h, lev - 1)
    return h
