import cmath

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from girko_lab.mde import (
    SpectralPoint,
    build_M,
    dm_deta,
    dyson_data,
    dyson_residual,
    small_eta_expansion,
    solve_m,
    solve_m_array,
)

bulk_z = st.builds(
    lambda r, t: r * cmath.exp(1j * t),
    st.floats(0.0, 0.95),
    st.floats(0.0, 2 * np.pi),
)
etas = st.floats(1e-4, 1e2).flatmap(lambda e: st.sampled_from([e, -e]))


def oracle_y(z, eta):
    """Im m from the unique positive root of the real cubic, by bisection."""
    a = abs(z) ** 2
    e = abs(eta)
    f = lambda y: y**3 + 2 * e * y**2 + (e * e + a - 1) * y - e
    return np.sign(eta) * brentq(f, 0.0, 10.0, xtol=1e-16, rtol=1e-15)


# (z, eta, Im m) frozen from the bisection oracle above
FROZEN = [
    (0.5, 0.1, 0.832780599348936),
    (0.8, 1e-3, 0.6003863932969473),
    (0.3, 1.0, 0.6027928120392432),
    (0.95, 1e-4, 0.31266162581225254),
]


@pytest.mark.parametrize("z, eta, y", FROZEN)
def test_frozen_values(z, eta, y):
    m = solve_m(SpectralPoint(z, eta)).m
    assert m.real == pytest.approx(0.0, abs=1e-14)
    assert m.imag == pytest.approx(y, rel=1e-13)


def test_z_zero_closed_form():
    for eta in [1e-4, 0.1, 1.0, 50.0]:
        y = (-eta + np.sqrt(eta * eta + 4)) / 2
        assert solve_m(SpectralPoint(0, eta)).m.imag == pytest.approx(y, rel=1e-13)


@given(bulk_z, etas)
def test_agrees_with_bisection_oracle(z, eta):
    m = solve_m(SpectralPoint(z, eta)).m
    assert m.imag == pytest.approx(oracle_y(z, eta), rel=1e-11)


@given(bulk_z, etas)
def test_residual_and_side_condition(z, eta):
    sol = solve_m(SpectralPoint(z, eta))
    assert sol.residual <= 1e-10
    assert np.sign(sol.m.imag) == np.sign(eta)
    # u is real and in (0, 1) on the imaginary axis
    assert abs(sol.u.imag) < 1e-12 and 0 < sol.u.real < 1


@given(bulk_z, etas, st.floats(0, 2 * np.pi))
def test_symmetries(z, eta, theta):
    m = solve_m(SpectralPoint(z, eta)).m
    assert solve_m(SpectralPoint(z, -eta)).m == pytest.approx(np.conj(m), abs=1e-10)
    assert solve_m(SpectralPoint(z, -eta)).m == pytest.approx(-m, abs=1e-10)
    assert solve_m(SpectralPoint(z * cmath.exp(1j * theta), eta)).m == pytest.approx(m, abs=1e-10)


def test_vectorised_solver_matches_scalar():
    z = np.linspace(0, 0.95, 7)[:, None]
    eta = np.geomspace(1e-4, 1e2, 9)[None, :]
    M = solve_m_array(z, eta)
    assert M.shape == (7, 9)
    assert np.max(dyson_residual(z, eta, M)) <= 1e-10
    assert M[3, 4] == solve_m(SpectralPoint(float(z[3, 0]), float(eta[0, 4]))).m


def test_outside_disk_still_solves():
    # for |z| > 1 the solution vanishes as eta -> 0 but stays admissible
    sol = solve_m(SpectralPoint(1.5, 1e-3))
    assert sol.residual < 1e-10 and 0 < sol.m.imag < 1e-2


def test_eta_zero_rejected():
    with pytest.raises(ValueError):
        SpectralPoint(0.1, 0.0)
    with pytest.raises(ValueError):
        SpectralPoint(0.1, np.inf)


@pytest.mark.parametrize("z", [0.0, 0.5, 0.8 + 0.3j])
@pytest.mark.parametrize("eta", [1e-3, 0.3, 5.0, -0.3])
def test_eta_derivatives_match_finite_differences(z, eta):
    h = 1e-6 * abs(eta)
    d = dyson_data(z, np.array([eta]))
    lo, hi = dyson_data(z, np.array([eta - h])), dyson_data(z, np.array([eta + h]))
    fd_m = (hi.m - lo.m) / (2 * h)
    fd_u = (hi.u - lo.u) / (2 * h)
    assert d.dm[0] == pytest.approx(fd_m[0], rel=1e-6)
    assert d.du[0] == pytest.approx(fd_u[0], rel=1e-6, abs=1e-9)
    assert dm_deta(SpectralPoint(z, eta)) == pytest.approx(d.dm[0], rel=1e-14)


def test_build_M_block_structure():
    p = SpectralPoint(0.3 + 0.4j, 0.2)
    M = build_M(p)
    sol = solve_m(p)
    assert M.b11 == M.b22 == sol.m
    assert M.b12 == pytest.approx(-p.z * sol.u)
    assert M.b21 == pytest.approx(-np.conj(p.z) * sol.u)
    # M solves -M^{-1} = w + Z + S[M] with Z = [[0, z], [conj z, 0]]
    Minv = np.linalg.inv(M.matrix)
    rhs = np.array([[p.w + sol.m, p.z], [np.conj(p.z), p.w + sol.m]])
    assert np.allclose(-Minv, rhs, atol=1e-12)


@pytest.mark.parametrize("z", [0.0, 0.8])
def test_small_eta_expansion_has_stable_quadratic_remainder(z):
    # |m - expansion| / eta^2 stays put while eta halves from 1e-2 to 1e-4
    eta = 1e-2
    consts = []
    while eta >= 1e-4:
        r = abs(solve_m(SpectralPoint(z, eta)).m - small_eta_expansion(z, eta))
        consts.append(r / eta**2)
        eta /= 2
    c = np.array(consts)
    assert np.all(np.abs(c[1:] / c[:-1] - 1) < 0.2)


def test_small_eta_expansion_sign():
    assert small_eta_expansion(0.3, -1e-3) == pytest.approx(np.conj(small_eta_expansion(0.3, 1e-3)))


def test_docstring_examples():
    import doctest

    import girko_lab.mde

    assert doctest.testmod(girko_lab.mde).failed == 0
