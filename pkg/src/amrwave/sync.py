"""
Inter-level coupling: ghost-cell filling, fine-to-coarse updating and the
coarse/fine conservation fix.

Conservation-fix sign conventions
---------------------------------
Every fine patch keeps one buffer entry per coarse cell bordering its coarse
projection (perimeter order: x-low side, x-high side, y-low side, y-high
side).  Let ``sigma = +1`` when that coarse cell ``U`` lies on the low side of
the interface (sides 0 and 2) and ``-1`` otherwise.  With ``h`` the coarse
cell size normal to the interface, ``dt`` the coarse step and ``R`` the
refinement ratio, the entry accumulates

* coarse side, once per coarse step:
  ``+dt/h * (fluctuation into U + sigma * Ftilde_coarse)``
* fine side, per fine edge and fine sub-step:
  ``+dt/(h R^2) * (fluctuation into the fine cell - sigma * Ftilde_fine)``
* C1, per fine edge and fine sub-step, from a Riemann problem between the
  saved coarse state and the fine border state (coarse on its own side):
  ``-dt/(h R^2) * (A^- dQ + A^+ dQ)``

which replaces the coarse interface flux seen by ``U`` with the time- and
edge-averaged fine flux, so the composite update telescopes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_types import NUM_EQN, Box, Hierarchy, InvariantError, Patch
from .riemann import Medium, solve_normal


class SequencingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# index-space helpers


def map_index(idx, n, periodic):
    """Apply the physical boundary rule to level indices; returns ``(mapped, inside)``.

    ``inside`` is False only for cells beyond a non-periodic boundary.
    """
    idx = np.asarray(idx)
    if periodic:
        return np.mod(idx, n), np.ones(idx.shape, dtype=bool)
    return np.clip(idx, 0, n - 1), (idx >= 0) & (idx < n)


def _same_time(a, b):
    return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


def _at_time(p: Patch, li, lj, t):
    """Interior values of ``p`` at local indices, linearly interpolated to time ``t``."""
    new = p.q[:, li, lj]
    if t is None or _same_time(t, p.t):
        return new
    span = p.t - p.t_old
    if p.old is None or span <= 0 or not (p.t_old - 1e-12 <= t <= p.t + 1e-12):
        raise SequencingError(f"no data bracketing t={t} on {p}")
    a = (t - p.t_old) / span
    return (1.0 - a) * p.old[:, li, lj] + a * new


def gather(patches, gi, gj, t=None):
    """Values of the level at global cells ``(gi, gj)`` taken from patch interiors.

    With ``t`` given, patches whose current time differs from ``t`` are
    linearly interpolated in time against their saved ``old`` snapshot.
    Returns ``(values (m, k), found (k,))``.
    """
    gi = np.asarray(gi, dtype=int).ravel()
    gj = np.asarray(gj, dtype=int).ravel()
    vals = np.zeros((NUM_EQN, gi.size))
    found = np.zeros(gi.size, dtype=bool)
    for p in patches:
        b = p.box
        sel = (~found) & (gi >= b.i0) & (gi < b.i1) & (gj >= b.j0) & (gj < b.j1)
        if not sel.any():
            continue
        vals[:, sel] = _at_time(p, gi[sel] - b.i0 + p.g, gj[sel] - b.j0 + p.g, t)
        found |= sel
    return vals, found


def level_owner(h: Hierarchy, level: int) -> np.ndarray:
    """Dense map from level cells to the index of the owning patch (-1: uncovered); cached."""
    cache = h.__dict__.setdefault("_owner_cache", {})
    patches = h.patches(level)
    key = tuple(p.id for p in patches)
    hit = cache.get(level)
    if hit is not None and hit[0] == key:
        return hit[1]
    owner = np.full(h.config.level_shape(level), -1, dtype=np.int32)
    for k, p in enumerate(patches):
        b = p.box
        owner[b.i0:b.i1, b.j0:b.j1] = k
    cache[level] = (key, owner)
    return owner


class Sampler:
    """Precomputed gather of fixed level cells ``(gi, gj)``; ``found`` marks covered cells."""

    def __init__(self, patches, owner, gi, gj):
        gi = np.asarray(gi, dtype=int).ravel()
        gj = np.asarray(gj, dtype=int).ravel()
        self.n = gi.size
        k = owner[gi, gj] if gi.size else np.zeros(0, dtype=np.int32)
        self.found = k >= 0
        self.groups = []
        order = np.argsort(k, kind="stable")
        ks = k[order]
        cuts = np.flatnonzero(np.diff(ks)) + 1
        for grp in np.split(order, cuts):
            if grp.size == 0 or k[grp[0]] < 0:
                continue
            p = patches[k[grp[0]]]
            self.groups.append((p, grp, gi[grp] - p.box.i0 + p.g, gj[grp] - p.box.j0 + p.g))

    def __call__(self, t=None):
        vals = np.zeros((NUM_EQN, self.n))
        for p, idx, li, lj in self.groups:
            vals[:, idx] = _at_time(p, li, lj, t)
        return vals


class CoarseInterpolator:
    """Conservative linear interpolation to fixed level-``fine_level`` cells.

    Slopes are unlimited central differences of the coarse data, one-sided
    where a neighbour is unavailable; the mean over the R x R children of a
    coarse cell reproduces the coarse value and linear fields are exact.
    """

    def __init__(self, h: Hierarchy, fine_level: int, fi, fj):
        cfg = h.config
        R = h.ratio(fine_level - 1)
        coarse = h.patches(fine_level - 1)
        owner = level_owner(h, fine_level - 1)
        shape = cfg.level_shape(fine_level - 1)
        per = cfg.periodic
        fi = np.asarray(fi, dtype=int).ravel()
        fj = np.asarray(fj, dtype=int).ravel()
        ci, cj = fi // R, fj // R
        self.center = Sampler(coarse, owner, ci, cj)
        if not self.center.found.all():
            bad = np.flatnonzero(~self.center.found)[0]
            raise InvariantError(f"no coarse donor for level-{fine_level} cell ({fi[bad]}, {fj[bad]})")
        offs = (((fi - ci * R) + 0.5) / R - 0.5, ((fj - cj * R) + 0.5) / R - 0.5)
        self.wc = np.ones(fi.size)
        self.terms = []
        for d, off in enumerate(offs):
            di, dj = (1, 0) if d == 0 else (0, 1)
            side = []
            for sgn in (1, -1):
                ni, in_i = map_index(ci + sgn * di, shape[0], per[0])
                nj, in_j = map_index(cj + sgn * dj, shape[1], per[1])
                smp = Sampler(coarse, owner, ni, nj)
                side.append((smp, smp.found & in_i & in_j))
            (sp, fp), (sm, fm) = side
            both, only_p, only_m = fp & fm, fp & ~fm, fm & ~fp
            wp = np.where(both, 0.5, np.where(only_p, 1.0, 0.0)) * off
            wm = np.where(both, -0.5, np.where(only_m, -1.0, 0.0)) * off
            self.wc += np.where(only_p, -1.0, np.where(only_m, 1.0, 0.0)) * off
            self.terms.append((sp, wp))
            self.terms.append((sm, wm))

    def __call__(self, t=None):
        out = self.center(t) * self.wc
        for smp, w in self.terms:
            if smp.groups and np.any(w):
                out += smp(t) * w
        return out


def interpolate_from_coarse(h: Hierarchy, fine_level: int, fi, fj, t=None):
    """One-off :class:`CoarseInterpolator` evaluation."""
    return CoarseInterpolator(h, fine_level, fi, fj)(t)


# ---------------------------------------------------------------------------
# ghost cells


@dataclass
class _GhostPlan:
    key: tuple
    li: np.ndarray
    lj: np.ndarray
    same: Sampler
    miss: np.ndarray
    coarse: object


def _ghost_plan(patch: Patch, h: Hierarchy, key) -> _GhostPlan:
    g = patch.g
    NX, NY = patch.nx + 2 * g, patch.ny + 2 * g
    LI, LJ = np.meshgrid(np.arange(NX), np.arange(NY), indexing="ij")
    ghost = ~((LI >= g) & (LI < g + patch.nx) & (LJ >= g) & (LJ < g + patch.ny))
    li, lj = LI[ghost], LJ[ghost]
    shape = h.config.level_shape(patch.level)
    per = h.config.periodic
    si, _ = map_index(li - g + patch.box.i0, shape[0], per[0])
    sj, _ = map_index(lj - g + patch.box.j0, shape[1], per[1])
    same = Sampler(h.patches(patch.level), level_owner(h, patch.level), si, sj)
    miss = np.flatnonzero(~same.found)
    coarse = None
    if miss.size:
        if patch.level == 1:
            raise InvariantError(f"no ghost donor for {patch}")
        coarse = CoarseInterpolator(h, patch.level, si[miss], sj[miss])
    return _GhostPlan(key, li, lj, same, miss, coarse)


def fill_ghost(patch: Patch, h: Hierarchy, t=None) -> Patch:
    """Fill the ghost frame of ``patch`` at time ``t`` (default: the patch time).

    Cells outside the domain are first mapped by the boundary rule (outflow:
    nearest interior cell, periodic: wrap); the mapped cell is then copied
    from a same-level patch interior or, failing that, interpolated from the
    coarser level in space and time.
    """
    if t is None:
        t = patch.t
    key = tuple(p.id for p in h.patches(patch.level))
    if patch.level > 1:
        key += (None,) + tuple(p.id for p in h.patches(patch.level - 1))
    plan = patch.__dict__.get("_ghost_plan")
    if plan is None or plan.key != key:
        plan = _ghost_plan(patch, h, key)
        patch.__dict__["_ghost_plan"] = plan
    vals = plan.same()
    if plan.coarse is not None:
        vals[:, plan.miss] = plan.coarse(t)
    patch.q[:, plan.li, plan.lj] = vals
    return patch


def fill_level_ghosts(h: Hierarchy, level: int, t=None) -> None:
    for p in h.patches(level):
        fill_ghost(p, h, t)


# ---------------------------------------------------------------------------
# updating


def update_fine_to_coarse(coarse: Patch, fine: Patch, R: int) -> Patch:
    """Overwrite coarse cells covered by ``fine`` with the mean of their children."""
    if not _same_time(coarse.t, fine.t):
        raise SequencingError(f"updating {coarse} at t={coarse.t} from {fine} at t={fine.t}")
    cb = fine.box.coarsen(R)
    ov = cb.intersect(coarse.box)
    if ov is None:
        return coarse
    m = fine.q.shape[0]
    fi0 = ov.i0 * R - fine.box.i0 + fine.g
    fj0 = ov.j0 * R - fine.box.j0 + fine.g
    block = fine.q[:, fi0:fi0 + ov.nx * R, fj0:fj0 + ov.ny * R]
    avg = block.reshape(m, ov.nx, R, ov.ny, R).mean(axis=(2, 4))
    ci0 = ov.i0 - coarse.box.i0 + coarse.g
    cj0 = ov.j0 - coarse.box.j0 + coarse.g
    coarse.q[:, ci0:ci0 + ov.nx, cj0:cj0 + ov.ny] = avg
    return coarse


def update_level(h: Hierarchy, fine_level: int) -> None:
    R = h.ratio(fine_level - 1)
    coarse = h.patches(fine_level - 1)
    owner = level_owner(h, fine_level - 1)
    for f in h.patches(fine_level):
        cb = f.box.coarsen(R)
        for k in np.unique(owner[cb.i0:cb.i1, cb.j0:cb.j1]):
            if k >= 0:
                update_fine_to_coarse(coarse[k], f, R)


# ---------------------------------------------------------------------------
# conservation-fix bookkeeping


SIDE_SIGMA = np.array([1.0, -1.0, 1.0, -1.0])


@dataclass
class Interface:
    """Perimeter entries of a fine patch's coarse projection."""

    R: int
    cbox: Box
    side: np.ndarray
    ci: np.ndarray
    cj: np.ndarray
    active: np.ndarray
    # fine-edge view: interface edges (interior-local) and the entry each feeds
    edges: dict
    edge_entry: dict
    # fine border cells (interior-local) matching each edge
    border: dict

    @property
    def size(self):
        return self.side.size


@dataclass
class LookupTable:
    """Coarse-patch table: bordering cell -> (fine patch, buffer offset)."""

    ci: np.ndarray
    cj: np.ndarray
    side: np.ndarray
    fine: list
    offset: np.ndarray

    def __len__(self):
        return self.ci.size


def perimeter_cells(cb: Box):
    """Raw coarse indices and side ids of the cells bordering ``cb`` (no corners)."""
    ks_y = np.arange(cb.ny)
    ks_x = np.arange(cb.nx)
    side = np.concatenate([np.full(cb.ny, 0), np.full(cb.ny, 1),
                           np.full(cb.nx, 2), np.full(cb.nx, 3)])
    ci = np.concatenate([np.full(cb.ny, cb.i0 - 1), np.full(cb.ny, cb.i1),
                         cb.i0 + ks_x, cb.i0 + ks_x])
    cj = np.concatenate([cb.j0 + ks_y, cb.j0 + ks_y,
                         np.full(cb.nx, cb.j0 - 1), np.full(cb.nx, cb.j1)])
    along = np.concatenate([ks_y, ks_y, ks_x, ks_x])
    return side, ci, cj, along


def build_interface(patch: Patch, h: Hierarchy) -> Interface:
    L = patch.level
    R = h.ratio(L - 1)
    if patch.box.i0 % R or patch.box.j0 % R or patch.box.nx % R or patch.box.ny % R:
        raise InvariantError(f"{patch} not aligned with the coarse grid")
    cb = patch.box.coarsen(R)
    side, ci_raw, cj_raw, along = perimeter_cells(cb)
    shape = h.config.level_shape(L - 1)
    per = h.config.periodic
    ci, in_i = map_index(ci_raw, shape[0], per[0])
    cj, in_j = map_index(cj_raw, shape[1], per[1])
    active = in_i & in_j
    for other in h.patches(L):
        ob = other.box.coarsen(R)
        active &= ~ob.contains(ci, cj)

    edges, edge_entry, border = {}, {}, {}
    ent = np.flatnonzero(active)
    r = np.arange(R)
    for direction, sides in (("x", (0, 1)), ("y", (2, 3))):
        e = ent[np.isin(side[ent], sides)]
        e_rep = np.repeat(e, R)
        fine_along = (np.repeat(along[e], R) * R + np.tile(r, e.size)).astype(int)
        low = side[e_rep] == sides[0]
        n_normal = patch.nx if direction == "x" else patch.ny
        normal_edge = np.where(low, 0, n_normal)
        normal_cell = np.where(low, 0, n_normal - 1)
        if direction == "x":
            edges[direction] = (normal_edge, fine_along)
            border[direction] = (normal_cell, fine_along)
        else:
            edges[direction] = (fine_along, normal_edge)
            border[direction] = (fine_along, normal_cell)
        edge_entry[direction] = e_rep
    return Interface(R, cb, side, ci, cj, active, edges, edge_entry, border)


def build_sync_structures(h: Hierarchy, fine_level: int) -> None:
    """(Re)build interfaces, buffers of ``fine_level`` and lookup tables of its parent level."""
    coarse = h.patches(fine_level - 1)
    for c in coarse:
        c.lookup = LookupTable(np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), [],
                               np.zeros(0, int))
    rows = {id(c): [] for c in coarse}
    for f in h.patches(fine_level):
        itf = build_interface(f, h)
        f.interface = itf
        f.fix_buffer = np.zeros((itf.size, NUM_EQN))
        f.coarse_buffer = np.zeros((itf.size, NUM_EQN))
        for k in np.flatnonzero(itf.active):
            owner = None
            for c in coarse:
                if c.box.contains(itf.ci[k], itf.cj[k]):
                    owner = c
                    break
            if owner is None:
                raise InvariantError(f"coarse cell ({itf.ci[k]}, {itf.cj[k]}) bordering {f} "
                                     "is not on the parent level")
            rows[id(owner)].append((itf.ci[k] - owner.box.i0, itf.cj[k] - owner.box.j0,
                                    itf.side[k], f, k))
    for c in coarse:
        rr = rows[id(c)]
        if rr:
            c.lookup = LookupTable(np.array([r[0] for r in rr]), np.array([r[1] for r in rr]),
                                   np.array([r[2] for r in rr]), [r[3] for r in rr],
                                   np.array([r[4] for r in rr]))


def clear_sync_structures(h: Hierarchy, level: int) -> None:
    for c in h.patches(level):
        c.lookup = None


def save_coarse_cells(h: Hierarchy, level: int) -> None:
    """Copy level-``level`` states bordering each finer patch into its coarse-cell buffer.

    Also zeroes the finer patches' conservation-fix buffers: this marks the
    start of a coarse step over their region.
    """
    if level >= len(h.levels):
        return
    coarse = h.patches(level)
    for f in h.patches(level + 1):
        itf = f.interface
        f.fix_buffer[...] = 0.0
        act = itf.active
        smp = f.__dict__.get("_coarse_sampler")
        if smp is None:
            smp = Sampler(coarse, level_owner(h, level), itf.ci[act], itf.cj[act])
            f.__dict__["_coarse_sampler"] = smp
        vals, found = smp(), smp.found
        if not found.all():
            raise InvariantError(f"missing coarse donor while saving coarse cells for {f}")
        f.coarse_buffer[act] = vals.T


def fine_interface_edges(f: Patch) -> dict:
    return {d: e for d, e in f.interface.edges.items() if e[0].size}


def accumulate_c1(f: Patch, dt_c: float, dx_c: float, dy_c: float, medium: Medium) -> None:
    """Riemann problems between saved coarse states and current fine border states."""
    itf = f.interface
    R = itf.R
    g = f.g
    for direction, h_c in (("x", dx_c), ("y", dy_c)):
        ent = itf.edge_entry[direction]
        if ent.size == 0:
            continue
        bi, bj = itf.border[direction]
        qf = f.q[:, bi + g, bj + g]
        qc = f.coarse_buffer[ent].T
        coarse_low = SIDE_SIGMA[itf.side[ent]] > 0
        ql = np.where(coarse_low, qc, qf)
        qr = np.where(coarse_low, qf, qc)
        rs = solve_normal(direction, ql, qr, medium, check=False)
        contrib = -(dt_c / (h_c * R * R)) * (rs.amdq + rs.apdq)
        np.add.at(f.fix_buffer, ent, contrib.T)


def _check_records(itf: Interface, direction: str, rec):
    ei, ej = itf.edges[direction]
    if rec.i.shape != ei.shape or np.any(rec.i != ei) or np.any(rec.j != ej):
        raise InvariantError(f"{direction}-records do not match the coarse-fine interface edges")


def accumulate_fine_side(f: Patch, records: dict, dt_c: float, dx_c: float, dy_c: float) -> None:
    """Fine-side fluctuations and correction fluxes at the patch's coarse-fine edges."""
    itf = f.interface
    R = itf.R
    for direction, rec in records.items():
        _check_records(itf, direction, rec)
        ent = itf.edge_entry[direction]
        h_c = dx_c if direction == "x" else dy_c
        sigma = SIDE_SIGMA[itf.side[ent]][:, None]
        into_fine = np.where(sigma > 0, rec.apdq, rec.amdq)
        contrib = (dt_c / (h_c * R * R)) * (into_fine - sigma * rec.flux)
        np.add.at(f.fix_buffer, ent, contrib)
    for direction in itf.edges:
        if direction not in records and itf.edge_entry[direction].size:
            raise InvariantError(f"missing {direction}-records for {f}")


def coarse_interface_edges(c: Patch) -> dict:
    """Interior-local edges of coarse patch ``c`` that face finer patches, in table order."""
    lk = c.lookup
    out = {}
    if lk is None or len(lk) == 0:
        return out
    for direction, sides in (("x", (0, 1)), ("y", (2, 3))):
        sel = np.isin(lk.side, sides)
        ii, jj, sd = lk.ci[sel], lk.cj[sel], lk.side[sel]
        if direction == "x":
            out[direction] = (np.where(sd == 0, ii + 1, ii), jj)
        else:
            out[direction] = (ii, np.where(sd == 2, jj + 1, jj))
    return {d: e for d, e in out.items() if e[0].size}


def accumulate_coarse_side(c: Patch, records: dict, dt_c: float) -> None:
    """Route coarse fluctuations/fluxes at coarse-fine edges into the finer patches' buffers."""
    lk = c.lookup
    if lk is None or len(lk) == 0:
        if records:
            raise InvariantError(f"records for {c} but it borders no finer patch")
        return
    for direction, sides in (("x", (0, 1)), ("y", (2, 3))):
        sel = np.flatnonzero(np.isin(lk.side, sides))
        if sel.size == 0:
            continue
        rec = records.get(direction)
        if rec is None or len(rec) != sel.size:
            raise InvariantError(f"coarse {direction}-records do not match lookup table of {c}")
        h_c = c.dx if direction == "x" else c.dy
        sigma = SIDE_SIGMA[lk.side[sel]][:, None]
        into_coarse = np.where(sigma > 0, rec.amdq, rec.apdq)
        contrib = (dt_c / h_c) * (into_coarse + sigma * rec.flux)
        for row, k in enumerate(sel):
            lk.fine[k].fix_buffer[lk.offset[k]] += contrib[row]


def apply_conservation_fix(h: Hierarchy, fine_level: int) -> None:
    """Add the accumulated C1+C2+C3 terms to the parent-level cells, then zero buffers."""
    for c in h.patches(fine_level - 1):
        lk = c.lookup
        if lk is None:
            continue
        for k in range(len(lk)):
            f = lk.fine[k]
            off = lk.offset[k]
            if f.fix_buffer is None or off >= f.fix_buffer.shape[0] or not f.interface.active[off]:
                raise InvariantError(f"dangling lookup entry {k} on {c}")
            c.q[:, lk.ci[k] + c.g, lk.cj[k] + c.g] += f.fix_buffer[off]
    for f in h.patches(fine_level):
        f.fix_buffer[...] = 0.0
