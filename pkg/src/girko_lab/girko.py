"""Test functions, linear eigenvalue statistics via Girko's formula, and CLT kernels.

Girko's formula writes a linear statistic of the eigenvalues of ``X`` as

    sum_i f(sigma_i) = (1/4pi) int Delta f(z) log|det(X - z)|^2 d^2z,

which is evaluated here through the split

    log|det(H^z - iT)| - int_0^T Im Tr G^z(i eta) d eta = sum_k log sigma_k(X - z)^2,

where both pieces have closed forms in the singular values ``sigma_k`` of
``X - z``.  The splitting parameter ``T`` therefore only enters through
rounding.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve

from .mde import SpectralPoint, dyson_data

__all__ = [
    "CLTPrediction",
    "CovarianceResult",
    "Profile",
    "SupportError",
    "TestFunction",
    "clt_prediction",
    "covariance_closed_form",
    "covariance_integral",
    "ginibre_kernel_variance",
    "girko_rhs",
    "linear_statistic",
    "linear_statistic_from_eigs",
    "make_test_function",
    "pairing_covariance",
    "u_kernel",
    "v_kernel",
    "vu_kernels",
]


class SupportError(ValueError):
    """The rescaled test function is not supported inside the unit disk."""


class Profile(str, enum.Enum):
    MOLLIFIER_BUMP = "mollifier-bump"
    GAUSSIAN_TRUNCATED = "gaussian-truncated"
    CUSTOM_GRID = "custom-grid"


# ---------------------------------------------------------------------------
# radial profiles on the unit disk: return f, f'(r)/r and Laplacian, as
# functions of r^2 so that nothing is singular at the origin.


def _bump(r2: np.ndarray):
    f = np.zeros_like(r2)
    g_over_r = np.zeros_like(r2)
    lap = np.zeros_like(r2)
    inside = r2 < 1.0
    r2i = r2[inside]
    q = r2i - 1.0
    fi = np.exp(1.0 / q)
    f[inside] = fi
    # f' = f * (-2 r / q^2)
    g_over_r[inside] = -2.0 * fi / q**2
    lap[inside] = fi * (4 * r2i + 8 * r2i * q - 4 * q * q) / q**4
    return f, g_over_r, lap


_GAUSS_SIGMA = 0.5


def _gauss_trunc(r2: np.ndarray):
    # ((g(r) - g(1)) / (1 - g(1)))^3 with g(r) = exp(-r^2 / (2 s^2)); vanishes
    # to third order at r = 1 so the Laplacian is continuous.
    s2 = _GAUSS_SIGMA**2
    g1 = math.exp(-1.0 / (2 * s2))
    c = 1.0 / (1.0 - g1)
    f = np.zeros_like(r2)
    g_over_r = np.zeros_like(r2)
    lap = np.zeros_like(r2)
    inside = r2 < 1.0
    r2i = r2[inside]
    g = np.exp(-r2i / (2 * s2))
    h = c * (g - g1)
    # dg/dr = -r g / s2 ;  d2g/dr2 = g (r^2/s2 - 1) / s2
    gp_over_r = -g / s2
    gpp = g * (r2i / s2 - 1) / s2
    f[inside] = h**3
    g_over_r[inside] = 3 * h**2 * c * gp_over_r
    fpp = 6 * h * (c * gp_over_r) ** 2 * r2i + 3 * h**2 * c * gpp
    lap[inside] = fpp + g_over_r[inside]
    return f, g_over_r, lap


_RADIAL = {Profile.MOLLIFIER_BUMP: _bump, Profile.GAUSSIAN_TRUNCATED: _gauss_trunc}


def _fd4(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order central first difference with zero padding outside the grid."""
    p = np.pad(a, [(2, 2) if ax == axis else (0, 0) for ax in range(a.ndim)])
    sl = lambda k: tuple(slice(2 + k, p.shape[ax] - 2 + k) if ax == axis else slice(None) for ax in range(a.ndim))
    return (-p[sl(2)] + 8 * p[sl(1)] - 8 * p[sl(-1)] + p[sl(-2)]) / (12 * h)


def _fd4_second(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    p = np.pad(a, [(2, 2) if ax == axis else (0, 0) for ax in range(a.ndim)])
    sl = lambda k: tuple(slice(2 + k, p.shape[ax] - 2 + k) if ax == axis else slice(None) for ax in range(a.ndim))
    return (-p[sl(2)] + 16 * p[sl(1)] - 30 * p[sl(0)] + 16 * p[sl(-1)] - p[sl(-2)]) / (12 * h * h)


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A compactly supported ``f`` sampled on a square grid, and its rescaling.

    The profile lives in the variable ``zeta`` on ``[-R, R]^2`` with
    ``R = support_radius``.  The statistic uses
    ``f_{z0,a}(z) = f(n^a (z - z0))``.  Grid integrals are taken in ``zeta``;
    ``||grad f||^2`` and ``int Delta f g`` are invariant under the rescaling.

    ``tilt`` multiplies a radial profile by ``1 + i*tilt*Re(zeta)/R``, which
    gives a complex test function with a non-degenerate pseudo-variance.
    """

    __test__ = False  # keep pytest from collecting this class

    profile: Profile
    support_radius: float
    z0: complex
    a: float
    n: int
    resolution: int
    tilt: float
    xs: np.ndarray
    values: np.ndarray
    grad_x: np.ndarray
    grad_y: np.ndarray
    laplacian: np.ndarray
    custom: Callable | None = None

    @property
    def h(self) -> float:
        return float(self.xs[1] - self.xs[0])

    @property
    def scale(self) -> float:
        """``n^a``."""
        return float(self.n) ** self.a

    @property
    def rescaled_radius(self) -> float:
        return self.support_radius / self.scale

    def quad(self, g: np.ndarray) -> complex:
        """Grid integral ``int g d^2 zeta`` (trapezoid; ``g`` vanishes on the boundary ring)."""
        return complex(np.sum(g) * self.h**2)

    def integral(self) -> complex:
        return self.quad(self.values)

    def grad_norm2(self) -> float:
        return float(np.real(self.quad(np.abs(self.grad_x) ** 2 + np.abs(self.grad_y) ** 2)))

    def grad_bilinear(self) -> complex:
        """Unconjugated ``int grad f . grad f``."""
        return self.quad(self.grad_x**2 + self.grad_y**2)

    def laplacian_l2(self) -> float:
        return float(np.sqrt(np.real(self.quad(np.abs(self.laplacian) ** 2))))

    def laplacian_l1(self) -> float:
        return float(np.real(self.quad(np.abs(self.laplacian))))

    def evaluate(self, zeta) -> np.ndarray:
        """``f(zeta)``: exact for analytic profiles, bilinear interpolation otherwise."""
        zeta = np.asarray(zeta, dtype=complex)
        if self.profile is Profile.CUSTOM_GRID:
            interp = RegularGridInterpolator(
                (self.xs, self.xs), self.values, method="linear", bounds_error=False, fill_value=0.0
            )
            pts = np.stack([zeta.real.ravel(), zeta.imag.ravel()], axis=-1)
            return interp(pts).reshape(zeta.shape)
        R = self.support_radius
        f, _, _ = _RADIAL[self.profile]((np.abs(zeta) / R) ** 2)
        return f * (1 + 1j * self.tilt * zeta.real / R)


def make_test_function(
    profile: Profile | str,
    z0: complex,
    a: float,
    n: int,
    grid_resolution: int,
    *,
    support_radius: float = 1.0,
    tilt: float = 0.0,
    custom: Callable[[np.ndarray], np.ndarray] | None = None,
) -> TestFunction:
    """Sample a test function on a ``grid_resolution x grid_resolution`` grid.

    Parameters
    ----------
    profile : {"mollifier-bump", "gaussian-truncated", "custom-grid"}
    z0 : complex
        Centre of the rescaled function.
    a : float
        Mesoscopic exponent in ``[0, 1/2)``.
    n : int
        Matrix dimension used for the rescaling ``n^a``.
    grid_resolution : int
        Nodes per side (at least 64); the grid covers ``[-R, R]^2``.
    support_radius : float
        Radius ``R`` of the support of the profile in ``zeta``.
    tilt : float
        Optional imaginary tilt; see :class:`TestFunction`.
    custom : callable, optional
        For ``custom-grid``: vectorised ``f(zeta)`` on complex arrays.  Its
        derivatives come from fourth-order central differences.

    Raises
    ------
    SupportError
        If the rescaled support ``|z0| + R n^{-a}`` leaves the closed unit disk.
    """
    profile = Profile(profile)
    if not 0 <= a < 0.5:
        raise ValueError(f"a must lie in [0, 1/2), got {a}")
    if grid_resolution < 64:
        raise ValueError("grid_resolution must be at least 64")
    R = float(support_radius)
    if abs(z0) + R * float(n) ** (-a) > 1.0 + 1e-12:
        raise SupportError(f"support |z0| + R n^-a = {abs(z0) + R * n ** (-a):.4f} leaves the unit disk")
    xs = np.linspace(-R, R, grid_resolution)
    Xg, Yg = np.meshgrid(xs, xs, indexing="ij")
    zeta = Xg + 1j * Yg
    if profile is Profile.CUSTOM_GRID:
        if custom is None:
            raise ValueError("custom-grid profile needs a callable")
        vals = np.asarray(custom(zeta), dtype=complex)
        vals[np.abs(zeta) >= R] = 0.0
        h = xs[1] - xs[0]
        gx, gy = _fd4(vals, h, 0), _fd4(vals, h, 1)
        lap = _fd4_second(vals, h, 0) + _fd4_second(vals, h, 1)
    else:
        f, g_over_r, lapr = _RADIAL[profile]((np.abs(zeta) / R) ** 2)
        # chain rule for the radius R: d/dzeta = (1/R) d/dxi
        gx0, gy0 = g_over_r * Xg / R**2, g_over_r * Yg / R**2
        lap0 = lapr / R**2
        tilt_fac = 1 + 1j * tilt * Xg / R
        vals = f * tilt_fac
        gx = gx0 * tilt_fac + f * (1j * tilt / R)
        gy = gy0 * tilt_fac
        lap = lap0 * tilt_fac + 2 * (1j * tilt / R) * gx0
    return TestFunction(
        profile=profile,
        support_radius=R,
        z0=complex(z0),
        a=float(a),
        n=int(n),
        resolution=int(grid_resolution),
        tilt=float(tilt),
        xs=xs,
        values=vals.astype(complex),
        grad_x=np.asarray(gx, dtype=complex),
        grad_y=np.asarray(gy, dtype=complex),
        laplacian=np.asarray(lap, dtype=complex),
        custom=custom,
    )


def linear_statistic_from_eigs(eigs: np.ndarray, tf: TestFunction) -> complex:
    """``sum_i f(n^a (sigma_i - z0))`` for given eigenvalues ``sigma_i``."""
    return complex(np.sum(tf.evaluate(tf.scale * (np.asarray(eigs) - tf.z0))))


def linear_statistic(X: np.ndarray, tf: TestFunction) -> complex:
    """Uncentred linear statistic over the eigenvalues of ``X``."""
    return linear_statistic_from_eigs(np.linalg.eigvals(X), tf)


def girko_rhs(X: np.ndarray, tf: TestFunction, T_cap: float | None = None, chunk: int = 2048) -> complex:
    """Evaluate the linear statistic through Girko's formula.

    At each grid node ``z`` where ``Delta f`` is nonzero, the singular values
    ``lambda_k`` of ``X - z`` give both pieces in closed form:

    * ``J_T = sum_k log(lambda_k^2 + T^2)``, which is ``log|det(H^z - iT)|``;
    * ``I_T = sum_k log((lambda_k^2 + T^2) / lambda_k^2)``, which is
      ``int_0^T Im Tr G^z(i eta) d eta``.

    The result is ``(1/4pi) int Delta f_{z0,a}(z) (J_T - I_T) d^2z``.  Nodes
    with a vanishing singular value are dropped with a warning.
    """
    X = np.asarray(X, dtype=complex)
    n = X.shape[0]
    if T_cap is None:
        T_cap = 10.0 * max(np.linalg.norm(X, 2), 1.0)
    elif T_cap < 10.0 * np.linalg.norm(X, 2):
        raise ValueError("T_cap must be at least 10 ||X||")
    Xg, Yg = np.meshgrid(tf.xs, tf.xs, indexing="ij")
    lap = tf.laplacian
    mask = lap != 0
    zeta = (Xg + 1j * Yg)[mask]
    lapv = lap[mask]
    zs = tf.z0 + zeta / tf.scale
    T2 = T_cap * T_cap
    total = 0j
    dropped = 0
    eye = np.eye(n)
    for start in range(0, zs.size, chunk):
        zc = zs[start : start + chunk]
        sv = np.linalg.svd(X[None, :, :] - zc[:, None, None] * eye, compute_uv=False)
        s2 = sv**2
        with np.errstate(divide="ignore"):
            J = np.sum(np.log(s2 + T2), axis=1)
            I = np.sum(np.log((s2 + T2) / s2), axis=1)
        vals = J - I
        ok = np.isfinite(vals)
        dropped += int(np.count_nonzero(~ok))
        total += np.sum(lapv[start : start + chunk][ok] * vals[ok])
    if dropped:
        warnings.warn(f"girko_rhs: dropped {dropped} grid node(s) with a zero singular value", RuntimeWarning)
    # d^2 z = d^2 zeta / n^{2a} and Delta_z = n^{2a} Delta_zeta cancel.
    return complex(total * tf.h**2 / (4 * np.pi))


# ---------------------------------------------------------------------------
# covariance kernels


def vu_kernels(zi: complex, zj: complex, eta_i, eta_j) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``V_{ij}`` on the outer grid ``eta_i x eta_j`` and ``U`` on each axis.

    ``V = (1/2) d_i d_j log D`` with
    ``D = 1 + (u_i u_j |z_i||z_j|)^2 - m_i^2 m_j^2 - 2 u_i u_j Re(z_i conj(z_j))``
    evaluated through the analytic ``eta``-derivatives of ``m`` and ``u``.
    """
    di = dyson_data(zi, np.atleast_1d(np.asarray(eta_i, dtype=float)))
    dj = dyson_data(zj, np.atleast_1d(np.asarray(eta_j, dtype=float)))
    zz = abs(zi) * abs(zj)
    re = (zi * np.conj(zj)).real
    mi, mpi, ui, upi = (x[:, None] for x in (di.m, di.dm, di.u, di.du))
    mj, mpj, uj, upj = (x[None, :] for x in (dj.m, dj.dm, dj.u, dj.du))
    D = 1 + (ui * uj * zz) ** 2 - mi**2 * mj**2 - 2 * ui * uj * re
    if np.any(np.abs(D) < 1e-13):
        raise ZeroDivisionError("log argument of V vanishes")
    Di = 2 * ui * upi * uj**2 * zz**2 - 2 * mi * mpi * mj**2 - 2 * upi * uj * re
    Dj = 2 * uj * upj * ui**2 * zz**2 - 2 * mj * mpj * mi**2 - 2 * upj * ui * re
    Dij = 4 * ui * upi * uj * upj * zz**2 - 4 * mi * mpi * mj * mpj - 2 * upi * upj * re
    V = 0.5 * (Dij * D - Di * Dj) / D**2
    Ui = 1j / np.sqrt(2) * 2 * di.m * di.dm
    Uj = 1j / np.sqrt(2) * 2 * dj.m * dj.dm
    return V, Ui, Uj


def v_kernel(pi: SpectralPoint, pj: SpectralPoint) -> complex:
    """``V_{ij} = (1/2) d_{eta_i} d_{eta_j} log D`` at a single pair of points."""
    V, _, _ = vu_kernels(pi.z, pj.z, pi.eta, pj.eta)
    return complex(V[0, 0])


def u_kernel(p: SpectralPoint) -> complex:
    """``U = (i/sqrt 2) d_eta m^2``."""
    d = dyson_data(p.z, np.atleast_1d(p.eta))
    return complex(1j / np.sqrt(2) * 2 * d.m[0] * d.dm[0])


def pairing_covariance(pi: SpectralPoint, pj: SpectralPoint, kappa4: float, n: int) -> complex:
    """Predicted ``E<G_i - EG_i><G_j - EG_j> = (V_ij + kappa4 U_i U_j) / (2 n^2)``."""
    return (v_kernel(pi, pj) + kappa4 * u_kernel(pi) * u_kernel(pj)) / (2.0 * n * n)


@dataclass(frozen=True)
class CovarianceResult:
    quadrature: float
    closed_form: float
    tail: float


def covariance_closed_form(zi: complex, zj: complex, kappa4: float) -> float:
    """``-(1/2) log|z_i - z_j|^2 + (kappa4/2)(1 - |z_i|^2)(1 - |z_j|^2)``."""
    return float(-0.5 * math.log(abs(zi - zj) ** 2) + 0.5 * kappa4 * (1 - abs(zi) ** 2) * (1 - abs(zj) ** 2))


def _log_weights(lo: float, hi: float, nodes: int, tail_power: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = np.linspace(math.log(lo), math.log(hi), nodes)
    eta = np.exp(s)
    ds = s[1] - s[0]
    w = ds * eta
    w[0] *= 0.5
    w[-1] *= 0.5
    tail = np.zeros(nodes)
    tail[0] = lo  # integrand frozen at its value on [0, lo]
    tail[-1] = hi / (tail_power - 1)  # integrand ~ eta^{-p} beyond hi
    return eta, w, tail


def covariance_integral(
    zi: complex,
    zj: complex,
    kappa4: float,
    *,
    nodes: int = 160,
    eta_lo: float | None = None,
    eta_hi: float = 1e2,
    tail_tol: float = 1e-2,
) -> CovarianceResult:
    """Double ``eta``-quadrature of ``-(V_ij + kappa4 U_i U_j)`` over ``(0, inf)^2``.

    Trapezoid rule in ``log eta`` on ``[eta_lo, eta_hi]``.  The integrand is
    frozen on ``[0, eta_lo]``.  Beyond ``eta_hi`` it decays like ``eta^{-3}``
    (from ``m ~ i/eta``).  The default ``eta_lo = 1e-4 min(1, |z_i - z_j|^2)``
    resolves the scale ``|z_i - z_j|^2`` on which ``V`` varies.

    Raises
    ------
    ArithmeticError
        If the extrapolated tail exceeds ``tail_tol``.
    """
    dz2 = abs(zi - zj) ** 2
    if dz2 == 0:
        raise ValueError("need z_i != z_j")
    if eta_lo is None:
        eta_lo = 1e-4 * min(1.0, dz2)
    eta, w, tw = _log_weights(eta_lo, eta_hi, nodes, 3.0)
    V, Ui, Uj = vu_kernels(zi, zj, eta, eta)
    g = -(V + kappa4 * Ui[:, None] * Uj[None, :])
    wt = w + tw
    full = np.real(wt @ g @ wt)
    core = np.real(w @ g @ w)
    tail = float(full - core)
    if abs(tail) > tail_tol:
        raise ArithmeticError(f"covariance quadrature tail {tail:.3e} exceeds {tail_tol}")
    return CovarianceResult(quadrature=float(full), closed_form=covariance_closed_form(zi, zj, kappa4), tail=tail)


# ---------------------------------------------------------------------------
# predictions


@dataclass(frozen=True)
class CLTPrediction:
    """Leading-order mean, variance and pseudo-variance of ``L_n(f_{z0,a})``."""

    mean: complex
    variance: float
    pseudo_variance: complex
    kappa4_term: float


def clt_prediction(tf: TestFunction, kappa4: float, n: int) -> CLTPrediction:
    """CLT predictions for the rescaled test function.

    ``mean = n^{1-2a}/pi int f + (1/8pi) int Delta f``,
    ``variance = ||grad f||^2 / (4pi)`` and
    ``pseudo_variance = (1/4pi) int grad f . grad f``.
    For ``a = 0`` (diagnostic mode) the ``kappa4`` corrections of the
    macroscopic regime are added.  ``kappa4_term`` then records
    ``(kappa4/pi^2) |int f|^2``.  It is ``0`` for ``a > 0``.
    """
    a = tf.a
    s2 = float(n) ** (-2 * a)  # d^2 z = n^{-2a} d^2 zeta
    int_f = tf.integral() * s2
    mean = float(n) / math.pi * int_f + tf.quad(tf.laplacian) / (8 * math.pi)
    variance = tf.grad_norm2() / (4 * math.pi)
    pseudo = tf.grad_bilinear() / (4 * math.pi)
    k4 = 0.0
    if a == 0:
        Xg, Yg = np.meshgrid(tf.xs, tf.xs, indexing="ij")
        z = tf.z0 + Xg + 1j * Yg
        mean -= kappa4 / math.pi * tf.quad(tf.values * (2 * np.abs(z) ** 2 - 1))
        k4 = float(kappa4 / math.pi**2 * abs(int_f) ** 2)
        variance += k4
        pseudo += kappa4 / math.pi**2 * int_f**2
    return CLTPrediction(mean=complex(mean), variance=float(variance), pseudo_variance=complex(pseudo), kappa4_term=k4)


def ginibre_kernel_variance(tf: TestFunction, n: int) -> float:
    """Exact variance of the statistic for the bulk Ginibre point process at size ``n``.

    The bulk Ginibre kernel has ``|K(z, w)|^2 = (n/pi)^2 exp(-n |z - w|^2)``.
    In the rescaled variable with ``nu = n^{1-2a}``,

        Var = (nu/pi) int |f|^2 - (nu/pi)^2 Re int conj(f) (k_nu * f),

    with ``k_nu(x) = exp(-nu |x|^2)``.  Edge effects are exponentially small
    for ``f`` supported well inside the disk.  As ``n -> infinity`` this
    tends to ``||grad f||^2 / (4 pi)``.  At moderate ``n`` the gap is large
    for steep profiles, so this serves as a finite-size diagnostic.
    """
    nu = float(n) ** (1 - 2 * tf.a)
    h = tf.h
    half = int(math.ceil(math.sqrt(40.0 / nu) / h))  # exp(-40) cut-off
    r = np.arange(-half, half + 1) * h
    kern = np.exp(-nu * (r[:, None] ** 2 + r[None, :] ** 2))
    f = np.pad(tf.values, half)
    conv = fftconvolve(f, kern, mode="same") * h * h
    mass = np.sum(np.abs(f) ** 2) * h * h
    cross = np.real(np.sum(np.conj(f) * conv)) * h * h
    return float(nu / math.pi * mass - (nu / math.pi) ** 2 * cross)
