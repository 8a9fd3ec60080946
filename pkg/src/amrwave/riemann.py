"""
Normal and transverse Riemann solvers for 2D linear acoustics, and wave limiting.

State layout is ``(p, u, v)`` along axis 0; every function accepts a single
state of shape ``(3,)`` or a batch of shape ``(3, ...)``.  The x-direction
system matrix is::

    A = [[0, K0, 0], [1/rho0, 0, 0], [0, 0, 0]]

and B is the same with the roles of u and v swapped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class NumericInputError(ValueError):
    pass


@dataclass(frozen=True)
class Medium:
    K0: float = 1.0
    rho0: float = 1.0

    def __post_init__(self):
        if not (self.K0 > 0 and self.rho0 > 0):
            raise ValueError("K0 and rho0 must be positive")

    @property
    def c(self) -> float:
        return math.sqrt(self.K0 / self.rho0)

    @property
    def Z(self) -> float:
        return self.rho0 * self.c

    def matrix(self, direction: str) -> np.ndarray:
        a = np.zeros((3, 3))
        k = _velocity_index(direction)
        a[0, k] = self.K0
        a[k, 0] = 1.0 / self.rho0
        return a

    def flux(self, direction: str, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        f = np.zeros_like(q)
        k = _velocity_index(direction)
        f[0] = self.K0 * q[k]
        f[k] = q[0] / self.rho0
        return f


@dataclass
class RiemannOutput:
    """Waves ``(num_waves, m, ...)``, speeds ``(num_waves,)`` and the two fluctuations."""

    waves: np.ndarray
    speeds: np.ndarray
    amdq: np.ndarray
    apdq: np.ndarray

    @property
    def num_waves(self):
        return self.waves.shape[0]


def _velocity_index(direction: str) -> int:
    if direction == "x":
        return 1
    if direction == "y":
        return 2
    raise ValueError(f"direction must be 'x' or 'y', got {direction!r}")


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericInputError("non-finite Riemann input")


def eigen_strengths(direction: str, dq, medium: Medium):
    """Strengths of the left-going and right-going acoustic waves in jump ``dq``."""
    k = _velocity_index(direction)
    Z = medium.Z
    a1 = (-dq[0] + Z * dq[k]) / (2.0 * Z)
    a2 = (dq[0] + Z * dq[k]) / (2.0 * Z)
    return a1, a2


def _eigvec(direction: str, medium: Medium, sign: float, like) -> np.ndarray:
    k = _velocity_index(direction)
    r = np.zeros(3)
    r[0] = sign * medium.Z
    r[k] = 1.0
    return r.reshape((3,) + (1,) * (np.ndim(like) - 1))


def solve_normal(direction: str, ql, qr, medium: Medium, check: bool = True) -> RiemannOutput:
    ql = np.asarray(ql, dtype=float)
    qr = np.asarray(qr, dtype=float)
    if check:
        _check_finite(ql, qr)
    dq = qr - ql
    a1, a2 = eigen_strengths(direction, dq, medium)
    c = medium.c
    w1 = a1 * _eigvec(direction, medium, -1.0, dq)
    w2 = a2 * _eigvec(direction, medium, +1.0, dq)
    waves = np.stack([w1, w2])
    speeds = np.array([-c, c])
    return RiemannOutput(waves, speeds, -c * w1, c * w2)


def solve_transverse(direction: str, asdq, medium: Medium, check: bool = True):
    """Split a normal-direction fluctuation into down/up-going transverse parts.

    ``direction`` is the normal sweep direction; the split uses the
    eigenstructure of the other direction.
    """
    asdq = np.asarray(asdq, dtype=float)
    if check:
        _check_finite(asdq)
    tdir = "y" if direction == "x" else "x"
    b1, b2 = eigen_strengths(tdir, asdq, medium)
    c = medium.c
    bm = -c * b1 * _eigvec(tdir, medium, -1.0, asdq)
    bp = c * b2 * _eigvec(tdir, medium, +1.0, asdq)
    return bm, bp


def vanleer(theta):
    theta = np.asarray(theta, dtype=float)
    a = np.abs(theta)
    return (theta + a) / (1.0 + a)


LIMITER_FUNCTIONS = {"vanleer": vanleer}


def wave_ratio(w_edge, w_upwind):
    """Projection ratio <W_upwind, W_edge> / <W_edge, W_edge>, 0 where W_edge vanishes."""
    w_edge = np.asarray(w_edge, dtype=float)
    w_upwind = np.asarray(w_upwind, dtype=float)
    den = np.sum(w_edge * w_edge, axis=0)
    num = np.sum(w_upwind * w_edge, axis=0)
    safe = np.where(den > 0.0, den, 1.0)
    return np.where(den > 0.0, num / safe, 0.0)


def limit_wave(w_edge, w_upwind, limiter: str = "vanleer"):
    w_edge = np.asarray(w_edge, dtype=float)
    if limiter == "none":
        return w_edge.copy()
    phi = LIMITER_FUNCTIONS[limiter](wave_ratio(w_edge, w_upwind))
    return phi * w_edge
