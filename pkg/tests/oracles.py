"""Slow, independent reference implementations used as test oracles."""

import numpy as np

from amrwave.riemann import limit_wave, solve_normal, solve_transverse


def reference_step(q, g, dt, dx, dy, medium, limiter="vanleer"):
    """Edge-by-edge unsplit wave-propagation update of the interior of ``q``.

    Built only from the single-state Riemann solvers; upwind waves missing at
    the array border are treated as zero.
    """
    m, NX, NY = q.shape
    F = np.zeros((m, NX - 1, NY))
    G = np.zeros((m, NX, NY - 1))
    AM = np.zeros((m, NX - 1, NY))
    AP = np.zeros((m, NX - 1, NY))
    BM = np.zeros((m, NX, NY - 1))
    BP = np.zeros((m, NX, NY - 1))
    rx = {}
    for e in range(NX - 1):
        for j in range(NY):
            rx[e, j] = solve_normal("x", q[:, e, j], q[:, e + 1, j], medium)
    ry = {}
    for i in range(NX):
        for f in range(NY - 1):
            ry[i, f] = solve_normal("y", q[:, i, f], q[:, i, f + 1], medium)

    for (e, j), rs in rx.items():
        AM[:, e, j], AP[:, e, j] = rs.amdq, rs.apdq
        for p in range(rs.num_waves):
            s = rs.speeds[p]
            up = (e - 1, j) if s > 0 else (e + 1, j)
            wu = rx[up].waves[p] if up in rx else np.zeros(m)
            w = limit_wave(rs.waves[p], wu, limiter)
            F[:, e, j] += 0.5 * abs(s) * (1 - abs(s) * dt / dx) * w
    for (i, f), rs in ry.items():
        BM[:, i, f], BP[:, i, f] = rs.amdq, rs.apdq
        for p in range(rs.num_waves):
            s = rs.speeds[p]
            up = (i, f - 1) if s > 0 else (i, f + 1)
            wu = ry[up].waves[p] if up in ry else np.zeros(m)
            w = limit_wave(rs.waves[p], wu, limiter)
            G[:, i, f] += 0.5 * abs(s) * (1 - abs(s) * dt / dy) * w

    # transverse: x-fluctuations enter cell columns and spread up/down
    for (e, j), rs in rx.items():
        for col, fl in ((e, rs.amdq), (e + 1, rs.apdq)):
            bm, bp = solve_transverse("x", fl, medium)
            if j - 1 >= 0:
                G[:, col, j - 1] -= 0.5 * dt / dx * bm
            if j < NY - 1:
                G[:, col, j] -= 0.5 * dt / dx * bp
    for (i, f), rs in ry.items():
        for row, fl in ((f, rs.amdq), (f + 1, rs.apdq)):
            am, ap = solve_transverse("y", fl, medium)
            if i - 1 >= 0:
                F[:, i - 1, row] -= 0.5 * dt / dy * am
            if i < NX - 1:
                F[:, i, row] -= 0.5 * dt / dy * ap

    out = q[:, g:NX - g, g:NY - g].copy()
    for i in range(g, NX - g):
        for j in range(g, NY - g):
            d = -dt / dx * (AP[:, i - 1, j] + AM[:, i, j] + F[:, i, j] - F[:, i - 1, j])
            d -= dt / dy * (BP[:, i, j - 1] + BM[:, i, j] + G[:, i, j] - G[:, i, j - 1])
            out[:, i - g, j - g] += d
    return out, dict(F=F, G=G, AM=AM, AP=AP, BM=BM, BP=BP)
