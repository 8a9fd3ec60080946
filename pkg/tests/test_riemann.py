import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from amrwave.riemann import (Medium, NumericInputError, limit_wave, solve_normal, solve_transverse,
                             vanleer, wave_ratio)

finite = st.floats(-1e3, 1e3, allow_nan=False)
states = st.tuples(finite, finite, finite).map(np.array)
media = st.builds(Medium, st.floats(0.1, 10.0), st.floats(0.1, 10.0))


def test_zero_jump():
    q = np.array([0.5, 0.1, 0.2])
    rs = solve_normal("x", q, q, Medium())
    assert not rs.waves.any() and not rs.amdq.any() and not rs.apdq.any()


def test_pressure_jump_fluctuations():
    rs = solve_normal("x", np.array([1.0, 0, 0]), np.zeros(3), Medium())
    np.testing.assert_allclose(rs.amdq, [0.5, -0.5, 0.0])
    np.testing.assert_allclose(rs.apdq, [-0.5, -0.5, 0.0])
    np.testing.assert_allclose(rs.amdq + rs.apdq, [0.0, -1.0, 0.0])
    np.testing.assert_allclose(rs.speeds, [-1.0, 1.0])


def test_zero_speed_jump():
    rs = solve_normal("x", np.zeros(3), np.array([0.0, 0.0, 1.0]), Medium())
    assert not rs.amdq.any() and not rs.apdq.any()


def test_non_finite_rejected():
    with pytest.raises(NumericInputError):
        solve_normal("x", np.array([np.nan, 0, 0]), np.zeros(3), Medium())
    with pytest.raises(NumericInputError):
        solve_transverse("x", np.array([np.inf, 0, 0]), Medium())


def test_bad_direction():
    with pytest.raises(ValueError):
        solve_normal("z", np.zeros(3), np.zeros(3), Medium())


@settings(max_examples=200)
@given(states, states, media, st.sampled_from(["x", "y"]))
def test_fluctuations_sum_to_flux_difference(ql, qr, med, d):
    rs = solve_normal(d, ql, qr, med)
    df = med.flux(d, qr) - med.flux(d, ql)
    np.testing.assert_allclose(rs.amdq + rs.apdq, df, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(rs.waves.sum(axis=0)[[0, 1 if d == "x" else 2]],
                               (qr - ql)[[0, 1 if d == "x" else 2]], rtol=1e-12, atol=1e-9)


@given(states, media, st.sampled_from(["x", "y"]))
def test_waves_are_eigenvectors(dq, med, d):
    rs = solve_normal(d, np.zeros(3), dq, med)
    A = med.matrix(d)
    for w, s in zip(rs.waves, rs.speeds):
        np.testing.assert_allclose(A @ w, s * w, rtol=1e-12, atol=1e-9)


def test_transverse_examples():
    med = Medium()
    bm, bp = solve_transverse("x", np.zeros(3), med)
    assert not bm.any() and not bp.any()
    bm, bp = solve_transverse("x", np.array([1.0, 0, 0]), med)
    np.testing.assert_allclose(bm, [-0.5, 0, 0.5])
    np.testing.assert_allclose(bp, [0.5, 0, 0.5])
    np.testing.assert_allclose(bm + bp, med.matrix("y") @ [1.0, 0, 0])


def test_transverse_single_eigenvector():
    med = Medium(4.0, 1.0)
    Z, c = med.Z, med.c
    bm, bp = solve_transverse("x", np.array([Z, 0, 1.0]), med)
    np.testing.assert_allclose(bm, 0.0, atol=1e-15)
    np.testing.assert_allclose(bp, c * np.array([Z, 0, 1.0]))


@given(states, media, st.sampled_from(["x", "y"]))
def test_transverse_sums_to_other_matrix(asdq, med, d):
    bm, bp = solve_transverse(d, asdq, med)
    other = "y" if d == "x" else "x"
    np.testing.assert_allclose(bm + bp, med.matrix(other) @ asdq, rtol=1e-12, atol=1e-9)


def test_limiter_examples():
    w = np.array([1.0, 2.0, 0.0])
    np.testing.assert_allclose(limit_wave(w, w), w)
    assert not limit_wave(w, -w).any()
    assert not limit_wave(w, np.zeros(3)).any()
    np.testing.assert_allclose(limit_wave(w, 3 * w), 1.5 * w)
    assert vanleer(3.0) == pytest.approx(1.5)
    np.testing.assert_allclose(limit_wave(w, -w, "none"), w)


def test_wave_ratio_zero_wave():
    assert wave_ratio(np.zeros(3), np.ones(3)) == 0.0


@given(st.floats(-1e6, 1e6))
def test_vanleer_bounds(theta):
    phi = vanleer(theta)
    assert 0.0 <= phi <= 2.0
    if theta <= 0:
        assert phi == 0.0
