"""
Single-patch advance with the dimensionally unsplit wave-propagation method,
plus CFL bookkeeping and step-size control.

Edge conventions on a ghost-extended array of shape ``(m, NX, NY)``:
x-edge ``e`` separates cells ``e`` and ``e + 1`` along axis 1, y-edge ``f``
separates cells ``f`` and ``f + 1`` along axis 2.  Interface edges handed in
by callers use interior-local numbering instead: x-edge ``i`` in ``[0, nx]``
lies between interior cells ``i - 1`` and ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core_types import NumericBlowup, Patch
from .riemann import LIMITER_FUNCTIONS, Medium, eigen_strengths


class CflAbort(RuntimeError):
    pass


@dataclass
class EdgeFluxRecord:
    """Fluctuations and correction flux saved on interface edges of one patch.

    ``i``/``j`` are interior-local edge coordinates (see module docstring);
    arrays have shape ``(k, m)``.
    """

    direction: str
    i: np.ndarray
    j: np.ndarray
    amdq: np.ndarray
    apdq: np.ndarray
    flux: np.ndarray
    t: float = 0.0

    def __len__(self):
        return len(self.i)


@dataclass
class AdvanceResult:
    q: np.ndarray
    cfl: float
    records: dict = field(default_factory=dict)
    solution_bytes: int = 0
    wave_bytes: int = 0


def _upwind(a, forward: bool, axis: int):
    """Strength at the upwind neighbour edge; zero where none exists."""
    out = np.zeros_like(a)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if forward:
        dst[axis], src[axis] = slice(1, None), slice(None, -1)
    else:
        dst[axis], src[axis] = slice(None, -1), slice(1, None)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _limited(a, forward, axis, phi_fn):
    if phi_fn is None:
        return a
    # both waves of a family share one eigenvector, so theta is a strength ratio
    au = _upwind(a, forward, axis)
    theta = np.divide(au, a, out=np.zeros_like(a), where=a != 0.0)
    return phi_fn(theta) * a


def _sweep(q, direction, dtdh, medium, limiter):
    """Fluctuations and second-order correction flux on every edge normal to ``direction``.

    Acoustic waves are strength times a fixed eigenvector ``(-+Z, e_k)``, so
    everything is carried as per-edge strengths; this matches
    :func:`amrwave.riemann.solve_normal` wave by wave.
    """
    k = 1 if direction == "x" else 2
    axis = k - 1
    dq = np.diff(q, axis=k)
    a1, a2 = eigen_strengths(direction, dq, medium)
    c, Z = medium.c, medium.Z
    shape = (q.shape[0],) + a1.shape
    amdq = np.zeros(shape)
    apdq = np.zeros(shape)
    amdq[0] = (c * Z) * a1
    amdq[k] = -c * a1
    apdq[0] = (c * Z) * a2
    apdq[k] = c * a2
    phi_fn = LIMITER_FUNCTIONS.get(limiter)
    l1 = _limited(a1, False, axis, phi_fn)
    l2 = _limited(a2, True, axis, phi_fn)
    kappa = 0.5 * c * (1.0 - c * dtdh)
    corr = np.zeros(shape)
    corr[0] = (kappa * Z) * (l2 - l1)
    corr[k] = kappa * (l1 + l2)
    return amdq, apdq, corr, c


def _transverse(direction, asdq, medium):
    """Down/up-going split of a normal fluctuation in the other direction's eigenbasis.

    Only the pressure and transverse-velocity components are nonzero, returned
    as ``(j, bm, bp)`` with ``j`` the transverse velocity index.
    """
    j = 2 if direction == "x" else 1
    c, Z = medium.c, medium.Z
    b1, b2 = eigen_strengths("y" if direction == "x" else "x", asdq, medium)
    bm = ((c * Z) * b1, -c * b1)
    bp = ((c * Z) * b2, c * b2)
    return j, bm, bp


def wave_propagation_step(q, dt, dx, dy, medium: Medium, limiter="vanleer"):
    """One unsplit step on a ghost-extended array.

    Returns the x- and y-edge fluctuations, the accumulated correction
    fluxes F and G, and the largest wave speed seen in each direction.
    """
    dtdx, dtdy = dt / dx, dt / dy
    amdq, apdq, F, sx = _sweep(q, "x", dtdx, medium, limiter)
    bmdq, bpdq, G, sy = _sweep(q, "y", dtdy, medium, limiter)

    # transverse propagation of x-fluctuations into G, then y-fluctuations into F
    for src, cols in ((amdq, slice(None, -1)), (apdq, slice(1, None))):
        j, bm, bp = _transverse("x", src, medium)
        for comp, m_, p_ in ((0, bm[0], bp[0]), (j, bm[1], bp[1])):
            G[comp, cols, :] -= 0.5 * dtdx * (m_[:, 1:] + p_[:, :-1])
    for src, rows in ((bmdq, slice(None, -1)), (bpdq, slice(1, None))):
        j, am, ap = _transverse("y", src, medium)
        for comp, m_, p_ in ((0, am[0], ap[0]), (j, am[1], ap[1])):
            F[comp, :, rows] -= 0.5 * dtdy * (m_[1:, :] + p_[:-1, :])
    return amdq, apdq, F, bmdq, bpdq, G, sx, sy


def _interior_update(q, g, nx, ny, dtdx, dtdy, amdq, apdq, F, bmdq, bpdq, G):
    I = slice(g, g + nx)
    J = slice(g, g + ny)
    Im = slice(g - 1, g + nx - 1)
    Jm = slice(g - 1, g + ny - 1)
    upd = q[:, I, J] - dtdx * (apdq[:, Im, J] + amdq[:, I, J])
    upd -= dtdy * (bpdq[:, I, Jm] + bmdq[:, I, J])
    upd -= dtdx * (F[:, I, J] - F[:, Im, J])
    upd -= dtdy * (G[:, I, J] - G[:, I, Jm])
    return upd


def advance(q, g, dt, dx, dy, medium: Medium, limiter="vanleer",
            interface_edges: Optional[dict] = None, flux_saving=True,
            patch_id=None, step=None, t=0.0) -> AdvanceResult:
    """Advance the interior of ghost-extended array ``q`` by ``dt``.

    ``interface_edges`` maps a key to a pair of integer arrays of
    interior-local edge coordinates whose fluctuations and correction fluxes
    are returned as :class:`EdgeFluxRecord` under the same key.  The key is
    the direction ``"x"``/``"y"`` or a tuple ending in it, e.g. ``("fine", "x")``.
    """
    m, NX, NY = q.shape
    nx, ny = NX - 2 * g, NY - 2 * g
    if dt < 0:
        raise ValueError("dt must be non-negative")
    with np.errstate(invalid="ignore", over="ignore"):  # non-finite results are reported below
        amdq, apdq, F, bmdq, bpdq, G, sx, sy = wave_propagation_step(q, dt, dx, dy, medium, limiter)
        new = _interior_update(q, g, nx, ny, dt / dx, dt / dy, amdq, apdq, F, bmdq, bpdq, G)
    if not np.all(np.isfinite(new)):
        raise NumericBlowup(patch_id, step)
    cfl = max(sx * dt / dx, sy * dt / dy)

    records = {}
    if interface_edges:
        for key, (ii, jj) in interface_edges.items():
            direction = key if isinstance(key, str) else key[-1]
            ii = np.asarray(ii, dtype=int)
            jj = np.asarray(jj, dtype=int)
            if direction == "x":
                e, r = ii - 1 + g, jj + g
                am, ap, fl = amdq[:, e, r], apdq[:, e, r], F[:, e, r]
            else:
                r, e = ii + g, jj - 1 + g
                am, ap, fl = bmdq[:, r, e], bpdq[:, r, e], G[:, r, e]
            records[key] = EdgeFluxRecord(direction, ii, jj, am.T.copy(), ap.T.copy(),
                                          fl.T.copy(), t)
    sol_bytes = new.size * 8
    wave_bytes = 0
    if flux_saving:
        wave_bytes = 8 * m * 2 * ((nx + 1) * ny + nx * (ny + 1))
    return AdvanceResult(new, cfl, records, sol_bytes, wave_bytes)


def advance_patch(patch: Patch, dt, medium: Medium, limiter="vanleer",
                  interface_edges: Optional[dict] = None, flux_saving=True,
                  step=None) -> AdvanceResult:
    """Advance ``patch`` in place (ghosts must already be filled at ``patch.t``)."""
    res = advance(patch.q, patch.g, dt, patch.dx, patch.dy, medium, limiter,
                  interface_edges, flux_saving, patch.id, step, patch.t)
    patch.field.interior[...] = res.q
    patch.field.t = patch.t + dt
    return res


def reduce_patch_cfl(patch_maxima: Sequence[float]) -> float:
    """Coordinator-side second stage of the max reduction."""
    vals = np.asarray(list(patch_maxima), dtype=float)
    if vals.size == 0:
        raise ValueError("cannot reduce CFL over an empty level")
    return float(vals.max())


def select_dt(desired_cfl, dx, max_speed, dt_max):
    if max_speed < 0:
        raise ValueError("max speed must be non-negative")
    if max_speed == 0:
        return dt_max
    return desired_cfl * dx / abs(max_speed)


class StepController:
    """Accept/reject policy guarding nu <= 1 with dt halving on rejection."""

    max_rejections = 10

    def __init__(self, desired_cfl: float):
        self.desired_cfl = desired_cfl
        self.rejections = 0

    def decide(self, observed_cfl: float, dt: float):
        """Return ``(accepted, dt_retry_or_None)``."""
        if observed_cfl <= 1.0:
            self.rejections = 0
            return True, None
        self.rejections += 1
        if self.rejections > self.max_rejections:
            raise CflAbort(f"{self.rejections} consecutive CFL rejections "
                           f"(last observed nu={observed_cfl:.4g}, dt={dt:.4g})")
        return False, dt / 2.0


def retake_step_on_cfl_violation(controller: StepController, observed_cfl: float, dt: float):
    return controller.decide(observed_cfl, dt)
