import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from girko_lab.ensembles import EnsembleSpec, Seed, sample_iid
from girko_lab.girko import (
    SupportError,
    clt_prediction,
    covariance_closed_form,
    covariance_integral,
    ginibre_kernel_variance,
    girko_rhs,
    linear_statistic,
    linear_statistic_from_eigs,
    make_test_function,
    pairing_covariance,
    u_kernel,
    v_kernel,
)
from girko_lab.mde import SpectralPoint, solve_m


def bump(r):
    return math.exp(1 / (r * r - 1)) if r < 1 else 0.0


def bump_prime(r):
    return -2 * r * bump(r) / (r * r - 1) ** 2 if r < 1 else 0.0


def radial(g, power):
    return 2 * math.pi * quad(lambda r: g(r) * r**power, 0, 1, epsabs=1e-14, limit=200)[0]


# ||grad f||^2 of the unit bump, frozen from the radial quadrature above
BUMP_GRAD2 = 0.85034


def test_bump_gradient_norm_frozen():
    oracle = radial(lambda r: bump_prime(r) ** 2, 1)
    assert oracle == pytest.approx(BUMP_GRAD2, abs=5e-6)
    tf = make_test_function("mollifier-bump", 0, 0.0, 32, 256)
    assert tf.grad_norm2() == pytest.approx(oracle, rel=1e-6)
    assert tf.integral().real == pytest.approx(radial(bump, 1), rel=1e-6)
    assert abs(tf.quad(tf.laplacian)) < 1e-8


@pytest.mark.parametrize("tilt", [0.5, 1.0])
def test_tilted_gradient_norm(tilt):
    # |grad (f (1 + i t x))|^2 integrates to ||grad f||^2 + (t^2/2) int |f'|^2 r^2
    oracle = radial(lambda r: bump_prime(r) ** 2, 1) + tilt**2 / 2 * radial(lambda r: bump_prime(r) ** 2, 3)
    tf = make_test_function("mollifier-bump", 0, 0.0, 32, 256, tilt=tilt)
    assert tf.grad_norm2() == pytest.approx(oracle, rel=1e-6)
    # the unconjugated form is no longer real
    assert abs(tf.grad_bilinear().imag) < 1e-10 and tf.grad_bilinear().real < tf.grad_norm2()


@pytest.mark.parametrize("profile", ["mollifier-bump", "gaussian-truncated"])
def test_analytic_derivatives_match_differences(profile):
    tf = make_test_function(profile, 0.1, 0.0, 32, 512, support_radius=0.8, tilt=0.3)
    h = tf.h
    fd = np.gradient(tf.values, h, axis=0)
    assert np.max(np.abs(fd - tf.grad_x)) < 5e-3 * np.max(np.abs(tf.grad_x))
    lap = sum(np.gradient(np.gradient(tf.values, h, axis=k), h, axis=k) for k in (0, 1))
    assert np.max(np.abs(lap[4:-4, 4:-4] - tf.laplacian[4:-4, 4:-4])) < 2e-2 * np.max(np.abs(tf.laplacian))


def test_custom_grid_profile_reproduces_bump():
    ref = make_test_function("mollifier-bump", 0, 0.0, 32, 256)

    def f(zeta):
        r2 = np.abs(zeta) ** 2
        out = np.zeros(zeta.shape, dtype=complex)
        inside = r2 < 1
        out[inside] = np.exp(1 / (r2[inside] - 1))
        return out

    tf = make_test_function("custom-grid", 0, 0.0, 32, 256, custom=f)
    assert tf.grad_norm2() == pytest.approx(ref.grad_norm2(), rel=1e-5)
    assert np.allclose(tf.values, ref.values)
    nodes = tf.xs[100] + 1j * tf.xs[[90, 120, 128]]
    assert np.allclose(tf.evaluate(nodes), tf.values[100, [90, 120, 128]])
    with pytest.raises(ValueError):
        make_test_function("custom-grid", 0, 0.0, 32, 128)


def test_evaluate_matches_grid_for_analytic_profiles():
    tf = make_test_function("gaussian-truncated", 0, 0.0, 32, 128, tilt=0.2)
    assert np.allclose(tf.evaluate(tf.xs[:, None] + 1j * tf.xs[None, :]), tf.values)
    assert tf.evaluate(np.array([2.0 + 0j]))[0] == 0


def test_rescaling_invariants():
    a = make_test_function("mollifier-bump", 0.2, 0.25, 256, 128)
    b = make_test_function("mollifier-bump", 0.2, 0.25, 4096, 128)
    assert a.grad_norm2() == b.grad_norm2()
    assert a.scale == pytest.approx(4.0) and b.rescaled_radius == pytest.approx(0.125)


@pytest.mark.parametrize(
    "kwargs, err",
    [
        (dict(a=0.5), ValueError),
        (dict(a=-0.1), ValueError),
        (dict(res=32), ValueError),
        (dict(z0=0.5), SupportError),
    ],
)
def test_test_function_validation(kwargs, err):
    args = dict(z0=0.0, a=0.0, res=128)
    args.update(kwargs)
    with pytest.raises(err):
        make_test_function("mollifier-bump", args["z0"], args["a"], 64, args["res"])


def test_linear_statistic_direct_sum():
    X = sample_iid(EnsembleSpec("complex-ginibre", 40), Seed(3))
    tf = make_test_function("mollifier-bump", 0.1j, 0.25, 40, 128)
    eigs = np.linalg.eigvals(X)
    direct = sum(bump(abs(40**0.25 * (e - 0.1j))) for e in eigs)
    assert linear_statistic(X, tf) == pytest.approx(direct, abs=1e-12)
    assert linear_statistic_from_eigs(eigs, tf) == pytest.approx(direct, abs=1e-12)


@pytest.mark.parametrize("a, tilt", [(0.0, 0.0), (0.25, 0.5)])
def test_girko_formula(a, tilt):
    n = 16
    X = sample_iid(EnsembleSpec("complex-ginibre", n), Seed(11))
    tf = make_test_function("mollifier-bump", 0, a, n, 128, tilt=tilt)
    direct = linear_statistic(X, tf)
    rhs = girko_rhs(X, tf)
    assert abs(rhs - direct) <= 1e-3 * max(1.0, abs(direct))


def test_girko_rhs_validates_cap_and_drops_singular_nodes():
    X = np.zeros((2, 2))
    tf = make_test_function("mollifier-bump", 0, 0.0, 2, 65)
    with pytest.raises(ValueError):
        girko_rhs(np.eye(2), tf, T_cap=1.0)
    with pytest.warns(RuntimeWarning, match="dropped 1"):
        girko_rhs(X, tf)


PAIRS = [(0.1, 0.12), (0.3j, 0.1 + 0.3j), (-0.2, 0.1), (0.4, 0.4 + 0.05j), (0.0, 0.25 - 0.1j)]


@pytest.mark.parametrize("zi, zj", PAIRS)
@pytest.mark.parametrize("k4", [0.0, -1.0])
def test_covariance_integral_matches_closed_form(zi, zj, k4):
    res = covariance_integral(zi, zj, k4)
    assert res.quadrature == pytest.approx(covariance_closed_form(zi, zj, k4), abs=1e-4)
    assert res.closed_form == covariance_closed_form(zi, zj, k4)


def test_covariance_integral_rejects_equal_points():
    with pytest.raises(ValueError):
        covariance_integral(0.1, 0.1, 0.0)


def _log_D(zi, zj, ei, ej):
    a, b = solve_m(SpectralPoint(zi, ei)), solve_m(SpectralPoint(zj, ej))
    uu = a.u * b.u
    zz = zi * np.conj(zj)
    return np.log(1 + abs(zz) ** 2 * uu**2 - a.m**2 * b.m**2 - 2 * uu * zz.real)


@pytest.mark.parametrize("zi, zj, ei, ej", [(0.1, 0.3j, 0.2, 0.5), (0.5, 0.52, 0.05, -0.08)])
def test_kernels_against_finite_differences(zi, zj, ei, ej):
    h = 1e-4
    fd = (
        _log_D(zi, zj, ei + h, ej + h)
        - _log_D(zi, zj, ei + h, ej - h)
        - _log_D(zi, zj, ei - h, ej + h)
        + _log_D(zi, zj, ei - h, ej - h)
    ) / (8 * h * h)
    V = v_kernel(SpectralPoint(zi, ei), SpectralPoint(zj, ej))
    assert V == pytest.approx(fd, rel=1e-5)
    assert V == pytest.approx(v_kernel(SpectralPoint(zj, ej), SpectralPoint(zi, ei)), rel=1e-12)
    m2 = lambda e: solve_m(SpectralPoint(zi, e)).m ** 2
    U = u_kernel(SpectralPoint(zi, ei))
    assert U == pytest.approx(1j / math.sqrt(2) * (m2(ei + h) - m2(ei - h)) / (2 * h), rel=1e-6)


def test_pairing_covariance_scaling():
    pi, pj = SpectralPoint(0.3, 0.1), SpectralPoint(0.45, 0.1)
    c0 = pairing_covariance(pi, pj, 0.0, 100)
    assert c0 == pytest.approx(v_kernel(pi, pj) / 2e4)
    assert pairing_covariance(pi, pj, 0.0, 200) == pytest.approx(c0 / 4)
    ck = pairing_covariance(pi, pj, -1.0, 100)
    assert ck - c0 == pytest.approx(-u_kernel(pi) * u_kernel(pj) / 2e4)


def test_clt_prediction():
    tf = make_test_function("mollifier-bump", 0, 0.25, 256, 256, tilt=0.5)
    p = clt_prediction(tf, -1.0, 256)
    assert p.variance == pytest.approx(tf.grad_norm2() / (4 * math.pi))
    assert p.pseudo_variance == pytest.approx(tf.grad_bilinear() / (4 * math.pi))
    assert p.mean == pytest.approx(256**0.5 / math.pi * tf.integral(), rel=1e-8)
    assert p.kappa4_term == 0.0
    # the kappa4 corrections only enter at a = 0
    macro = make_test_function("mollifier-bump", 0, 0.0, 256, 256)
    assert clt_prediction(macro, -1.0, 256).variance < clt_prediction(macro, 0.0, 256).variance


def test_kernel_variance_tends_to_gradient_norm():
    tf = make_test_function("mollifier-bump", 0, 0.25, 256, 256, tilt=0.5)
    limit = tf.grad_norm2() / (4 * math.pi)
    v = [ginibre_kernel_variance(tf, n) for n in (64, 256, 4096, 10**6)]
    assert all(a < b for a, b in zip(v, v[1:]))
    assert v[-1] == pytest.approx(limit, rel=1e-2)
    # frozen from an independent FFT evaluation on a 512 grid
    assert v[1] == pytest.approx(0.06041, rel=2e-3)


def test_kernel_variance_matches_sampled_ginibre():
    n = 64
    tf = make_test_function("mollifier-bump", 0, 0.25, n, 128)
    L = np.array(
        [linear_statistic(sample_iid(EnsembleSpec("complex-ginibre", n), Seed(8, k)), tf) for k in range(400)]
    )
    c = np.abs(L - L.mean()) ** 2
    var, se = c.mean() * len(L) / (len(L) - 1), c.std(ddof=1) / np.sqrt(len(L))
    assert abs(var - ginibre_kernel_variance(tf, n)) < 4 * se
