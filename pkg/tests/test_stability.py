import cmath
import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from girko_lab.blocks import EMINUS, F, FSTAR, IDENTITY, BlockConstant
from girko_lab.mde import SpectralPoint, build_M, solve_m
from girko_lab.stability import (
    StabilityError,
    apply_B12,
    apply_B12_adjoint,
    apply_B12_full,
    block_decompose,
    eigendecompose,
    m12,
    m12_full,
    operator_matrix,
    project_minus,
    trace_m12_I,
)

points = st.builds(
    lambda r, t, e, s: SpectralPoint(r * cmath.exp(1j * t), s * e),
    st.floats(0.0, 0.9),
    st.floats(0.0, 2 * np.pi),
    st.floats(1e-3, 2.0),
    st.sampled_from([1, -1]),
)
blocks_st = st.builds(
    BlockConstant,
    *[st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False)] * 4,
)


def close_pair(p1, p2):
    return abs(p1.z - p2.z) < 1e-6 and p1.eta * p2.eta > 0 and abs(p1.eta - p2.eta) < 1e-6


@given(points, points)
def test_eigenvectors(p1, p2):
    pair = eigendecompose(p1, p2)
    for beta, R, L in (
        (pair.beta_plus, pair.R_plus, pair.L_plus),
        (pair.beta_minus, pair.R_minus, pair.L_minus),
    ):
        assert (apply_B12(pair, R) - beta * R).norm() <= 1e-9 * R.norm()
        # L is a left eigenvector: <L B[Q]> = beta <L Q> for every Q
        for Q in (IDENTITY, EMINUS, F, FSTAR):
            assert (L @ apply_B12(pair, Q)).trace() == pytest.approx(beta * (L @ Q).trace(), abs=1e-9)
    for Q in (F, FSTAR):
        assert apply_B12(pair, Q).allclose(Q)


@given(points, points)
def test_spectrum_of_operator_matrix(p1, p2):
    pair = eigendecompose(p1, p2)
    ev = np.linalg.eigvals(operator_matrix(pair))
    expected = np.array([1, 1, pair.beta_plus, pair.beta_minus])
    # match each expected eigenvalue to a computed one
    dist = np.abs(ev[:, None] - expected[None, :])
    assert min(sum(dist[i, j] for i, j in zip(perm, range(4))) for perm in itertools.permutations(range(4))) < 1e-6


@given(points, points)
def test_beta_product_is_closed_form_denominator(p1, p2):
    pair = eigendecompose(p1, p2)
    s1, s2 = solve_m(p1), solve_m(p2)
    uu = s1.u * s2.u
    zz = p1.z * np.conj(p2.z)
    den = 1 + abs(zz) ** 2 * uu**2 - s1.m**2 * s2.m**2 - 2 * uu * zz.real
    assert pair.beta_plus * pair.beta_minus == pytest.approx(den, abs=1e-10)
    assert np.linalg.det(operator_matrix(pair)) == pytest.approx(den, abs=1e-10)


@given(points, points, blocks_st)
def test_m12_inverts_B12(p1, p2, A):
    pair = eigendecompose(p1, p2)
    X = m12(pair, A)
    Q = pair.M1 @ A @ pair.M2
    assert (apply_B12(pair, X) - Q).norm() <= 1e-8 * max(1.0, X.norm())
    brute = np.linalg.solve(operator_matrix(pair), Q.matrix.ravel())
    assert np.allclose(X.matrix.ravel(), brute, rtol=1e-7, atol=1e-9 * max(1.0, X.norm()))


@given(points, points)
def test_trace_m12_identity_closed_form(p1, p2):
    pair = eigendecompose(p1, p2)
    tr = m12(pair, IDENTITY).trace()
    assert tr == pytest.approx(trace_m12_I(p1, p2), rel=1e-9, abs=1e-10)


@given(points, points, blocks_st, blocks_st)
def test_adjoint(p1, p2, Q, R):
    pair = eigendecompose(p1, p2)
    lhs = (Q.H @ apply_B12(pair, R)).trace()
    rhs = (apply_B12_adjoint(pair, Q).H @ R).trace()
    assert lhs == pytest.approx(rhs, abs=1e-10)


@pytest.mark.parametrize("sign", [1, -1])
@pytest.mark.parametrize("z", [0.0, 0.5, 0.3 + 0.6j])
def test_minus_pairing_tends_to_unit_modulus(z, sign):
    errs = []
    for eta in [1e-2, 1e-3, 1e-4]:
        pair = eigendecompose(SpectralPoint(z, eta), SpectralPoint(z, sign * eta))
        errs.append(abs(abs((pair.L_minus @ pair.R_minus).trace()) - 1))
    assert errs[-1] < 1e-3
    assert errs[0] > errs[1] > errs[2]


def test_coinciding_parameters_eigenvectors():
    # equal signs: L_- is proportional to E_-, opposite signs: to I
    same = eigendecompose(SpectralPoint(0.4, 1e-3), SpectralPoint(0.4, 1e-3))
    assert same.L_minus.allclose(-EMINUS, atol=1e-12)
    assert same.L_plus.allclose(IDENTITY, atol=1e-12)
    opp = eigendecompose(SpectralPoint(0.4, 1e-3), SpectralPoint(0.4, -1e-3))
    assert opp.L_minus.allclose(IDENTITY, atol=1e-12)
    assert opp.L_plus.allclose(-EMINUS, atol=1e-12)


def test_z_zero_opposite_signs_exact_value():
    # <M12^I> = Im m / eta at z = 0 when the two eta's are opposite
    for eta in [1e-1, 1e-2, 1e-3]:
        y = solve_m(SpectralPoint(0, eta)).m.imag
        assert trace_m12_I(SpectralPoint(0, eta), SpectralPoint(0, -eta)) == pytest.approx(y / eta, rel=1e-10)


def test_beta_minus_bracket():
    ratios = []
    for dz, eta, (s1, s2) in itertools.product([1e-3, 1e-2, 1e-1], [1e-4, 1e-3, 1e-2], [(1, 1), (1, -1)]):
        for z1, d in [(0.5, 1j), (0.2, 1), (0.7j, 1 + 1j)]:
            z2 = z1 + dz * d / abs(d)
            pair = eigendecompose(SpectralPoint(z1, s1 * eta), SpectralPoint(z2, s2 * eta))
            ratios.append(abs(pair.beta_minus) / (abs(z1 - z2) ** 2 + 2 * eta))
    C = 10
    assert 1 / C <= min(ratios) and max(ratios) <= C


def test_branch_cut_flag():
    # Im(z1 conj z2) large with tiny eta pushes s below zero
    pair = eigendecompose(SpectralPoint(0.6, 1e-3), SpectralPoint(0.6j, 1e-3))
    assert pair.on_branch_cut == (pair.s.real < 0)
    assert pair.s.imag == 0 or not pair.on_branch_cut
    assert (apply_B12(pair, pair.R_minus) - pair.beta_minus * pair.R_minus).norm() < 1e-9


def test_full_operator_matches_brute_force_inversion():
    n = 3
    rng = np.random.default_rng(0)
    p1, p2 = SpectralPoint(0.3 + 0.1j, 0.05), SpectralPoint(0.35, -0.07)
    pair = eigendecompose(p1, p2)
    N = 2 * n
    basis = np.eye(N * N).reshape(N * N, N, N)
    B = np.stack([apply_B12_full(pair, E).ravel() for E in basis], axis=1)
    assert B.shape == (36, 36)
    A = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    Q = pair.M1.embed(n) @ A @ pair.M2.embed(n)
    brute = np.linalg.solve(B, Q.ravel()).reshape(N, N)
    assert np.allclose(m12_full(pair, A), brute, atol=1e-7)


def test_block_decompose():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    coeffs, rest = block_decompose(A)
    rebuilt = (coeffs[0] * IDENTITY + coeffs[1] * EMINUS + coeffs[2] * F + coeffs[3] * FSTAR).embed(4) + rest
    assert np.allclose(rebuilt, A)
    for i, j in itertools.product((0, 1), repeat=2):
        assert abs(np.trace(rest[4 * i : 4 * i + 4, 4 * j : 4 * j + 4])) < 1e-12
    with pytest.raises(ValueError):
        block_decompose(np.ones((3, 3)))


def test_project_minus_is_idempotent():
    pair = eigendecompose(SpectralPoint(0.5, 0.01), SpectralPoint(0.52, 0.01))
    Q = BlockConstant(1, 2j, -1, 0.5)
    P = project_minus(pair, Q)
    assert project_minus(pair, P).allclose(P, atol=1e-10)


def test_m12_with_F_has_no_resonance():
    # F and F^* are fixed by B12, so M12^{M1^{-1} F M2^{-1}} = F
    pair = eigendecompose(SpectralPoint(0.2, 0.1), SpectralPoint(0.25, 0.1))
    M1i = BlockConstant.from_matrix(np.linalg.inv(build_M(pair.p1).matrix))
    M2i = BlockConstant.from_matrix(np.linalg.inv(build_M(pair.p2).matrix))
    assert m12(pair, M1i @ F @ M2i).allclose(F, atol=1e-12)


def test_degenerate_pair_raises():
    # far-separated spectral points still give a regular operator
    eigendecompose(SpectralPoint(0.0, 1.0), SpectralPoint(0.9, 1.0))
    with pytest.raises(StabilityError):
        # s = m1^2 m2^2 - (u1 u2 Im z1 conj z2)^2 vanishes here by construction
        _find_degenerate()


def _find_degenerate():
    from scipy.optimize import brentq

    # on z1 = r, z2 = i r, equal eta, s(eta) changes sign; locate the zero
    r = 0.9

    def s_of(eta):
        a, b = solve_m(SpectralPoint(r, eta)), solve_m(SpectralPoint(1j * r, eta))
        return (a.m**2 * b.m**2 - (a.u * b.u * r * r) ** 2).real

    eta0 = brentq(s_of, 1e-4, 5.0, xtol=1e-15)
    return eigendecompose(SpectralPoint(r, eta0), SpectralPoint(1j * r, eta0))
