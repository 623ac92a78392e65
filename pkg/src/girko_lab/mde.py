"""Scalar Dyson equation on the imaginary axis and the block matrix ``M^z``.

For ``w = i*eta`` the equation

    -1/m = w + m - |z|^2 / (w + m)

is cleared of denominators into the cubic

    m^3 + 2 w m^2 + (w^2 + 1 - |z|^2) m + w = 0.

Its three roots come from a companion-matrix eigensolve.  The physical one
is purely imaginary with ``sign(Im m) = sign(eta)``, and a few Newton steps
on the real cubic for ``y = Im m`` polish it.  The off-diagonal coefficient
of ``M^z`` is ``-z u`` with ``u = m / (w + m)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import BlockConstant

__all__ = [
    "DysonData",
    "ScalarMSolution",
    "SolverError",
    "SpectralPoint",
    "build_M",
    "dm_deta",
    "dyson_data",
    "dyson_residual",
    "expected_trace_correction",
    "small_eta_expansion",
    "solve_m",
    "solve_m_array",
]

RESIDUAL_TOL = 1e-10
JACOBIAN_TOL = 1e-12


class SolverError(RuntimeError):
    """The Dyson solver found no admissible root, or a derivative is singular."""


@dataclass(frozen=True)
class SpectralPoint:
    """Spectral parameter ``(z, eta)`` with ``w = i*eta`` on the imaginary axis."""

    z: complex
    eta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "z", complex(self.z))
        object.__setattr__(self, "eta", float(self.eta))
        if not np.isfinite(self.eta) or self.eta == 0.0:
            raise ValueError(f"eta must be finite and nonzero, got {self.eta}")
        if not np.isfinite(self.z):
            raise ValueError(f"z must be finite, got {self.z}")

    @property
    def w(self) -> complex:
        return 1j * self.eta


@dataclass(frozen=True)
class ScalarMSolution:
    """Solution ``m`` of the scalar Dyson equation with ``u = m / (w + m)``."""

    m: complex
    u: complex
    residual: float


@dataclass(frozen=True)
class DysonData:
    """Vectorised Dyson data: ``m``, ``u`` and their ``eta``-derivatives."""

    m: np.ndarray
    u: np.ndarray
    dm: np.ndarray
    du: np.ndarray


def dyson_residual(z, eta, m):
    """``|1/m + i eta + m - |z|^2/(i eta + m)|``, broadcasting over inputs."""
    w = 1j * np.asarray(eta, dtype=float)
    a = np.abs(np.asarray(z)) ** 2
    m = np.asarray(m, dtype=complex)
    return np.abs(1.0 / m + w + m - a / (w + m))


def _polish(y: np.ndarray, eta: np.ndarray, a: np.ndarray, steps: int = 3) -> np.ndarray:
    # Newton on y^3 + 2 eta y^2 + (eta^2 + a - 1) y - eta = 0, accepting a
    # step only when it reduces |g|.
    c1 = eta**2 + a - 1.0
    for _ in range(steps):
        g = ((y + 2 * eta) * y + c1) * y - eta
        dg = (3 * y + 4 * eta) * y + c1
        with np.errstate(divide="ignore", invalid="ignore"):
            y_new = y - g / dg
        g_new = ((y_new + 2 * eta) * y_new + c1) * y_new - eta
        better = np.isfinite(y_new) & (np.abs(g_new) < np.abs(g)) & (np.sign(y_new) == np.sign(eta))
        y = np.where(better, y_new, y)
    return y


def solve_m_array(z, eta) -> np.ndarray:
    """Solve the Dyson equation for arrays of ``z`` and ``eta`` (broadcast).

    Raises
    ------
    SolverError
        If some point has no root in the correct half-plane, or the polished
        residual exceeds ``1e-10`` times ``max(1, |eta|, 1/|m|)``.
    """
    z = np.asarray(z, dtype=complex)
    eta = np.asarray(eta, dtype=float)
    z, eta = np.broadcast_arrays(z, eta)
    shape = eta.shape
    a = np.abs(z.ravel()) ** 2
    e = eta.ravel().astype(float)
    if np.any(e == 0) or not np.all(np.isfinite(e)):
        raise SolverError("eta must be finite and nonzero")
    w = 1j * e
    k = e.size
    comp = np.zeros((k, 3, 3), dtype=complex)
    comp[:, 0, 0] = -2 * w
    comp[:, 0, 1] = -(w**2 + 1 - a)
    comp[:, 0, 2] = -w
    comp[:, 1, 0] = 1.0
    comp[:, 2, 1] = 1.0
    roots = np.linalg.eigvals(comp)
    sgn = np.sign(e)[:, None]
    admissible = (roots.imag * sgn > 0) & (np.abs(roots + w[:, None]) > 1e-300)
    # The physical root is the purely imaginary one; rank by |Re m| / |m|.
    score = np.where(admissible, np.abs(roots.real) / np.abs(roots), np.inf)
    idx = np.argmin(score, axis=1)
    bad = ~np.isfinite(score[np.arange(k), idx])
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise SolverError(
            f"no root with sign(Im m) = sign(eta) at |z|={np.sqrt(a[j]):.6g}, eta={e[j]:.6g}; roots={roots[j]}"
        )
    y = _polish(roots[np.arange(k), idx].imag, e, a)
    m = 1j * y
    res = dyson_residual(np.sqrt(a), e, m)
    scale = np.maximum.reduce([np.ones_like(e), np.abs(e), 1.0 / np.abs(y)])
    fail = ~(res <= RESIDUAL_TOL * scale)
    if np.any(fail):
        j = int(np.flatnonzero(fail)[0])
        raise SolverError(
            f"Dyson residual {res[j]:.3e} above tolerance at |z|={np.sqrt(a[j]):.6g}, eta={e[j]:.6g}, m={m[j]}"
        )
    return m.reshape(shape)


def solve_m(p: SpectralPoint) -> ScalarMSolution:
    """Solve the scalar Dyson equation at ``p``.

    Examples
    --------
    >>> sol = solve_m(SpectralPoint(0.0, 1.0))
    >>> round(sol.m.imag, 6)
    0.618034
    """
    m = complex(solve_m_array(p.z, p.eta))
    u = m / (p.w + m)
    return ScalarMSolution(m=m, u=u, residual=float(dyson_residual(p.z, p.eta, m)))


def build_M(p: SpectralPoint) -> BlockConstant:
    """Block form ``[[m, -z u], [-conj(z) u, m]]`` of ``M^z(i eta)``."""
    sol = solve_m(p)
    return BlockConstant(sol.m, -p.z * sol.u, -np.conj(p.z) * sol.u, sol.m)


def _dm_from_m(a, w, m):
    num = 2 * m * m + 2 * w * m + 1
    den = 3 * m * m + 4 * w * m + w * w + 1 - a
    if np.any(np.abs(den) < JACOBIAN_TOL):
        raise SolverError(f"Dyson Jacobian is singular (|denominator| = {np.min(np.abs(den)):.3e})")
    return -1j * num / den


def dyson_data(z, eta) -> DysonData:
    """``m, u`` and ``dm/deta, du/deta`` on broadcast arrays of ``(z, eta)``."""
    z = np.asarray(z, dtype=complex)
    eta = np.asarray(eta, dtype=float)
    m = solve_m_array(z, eta)
    a = np.abs(z) ** 2
    w = 1j * eta
    dm = _dm_from_m(a, w, m)
    u = m / (w + m)
    du = (w * dm - 1j * m) / (w + m) ** 2
    return DysonData(m=m, u=u, dm=dm, du=du)


def dm_deta(p: SpectralPoint) -> complex:
    """Implicit derivative ``dm/deta`` of the Dyson solution.

    Differentiating the cubic ``P(m, w) = 0`` with ``w = i eta`` gives
    ``dm/deta = -i (2m^2 + 2wm + 1) / (3m^2 + 4wm + w^2 + 1 - |z|^2)``.
    """
    m = solve_m(p).m
    return complex(_dm_from_m(abs(p.z) ** 2, p.w, m))


def expected_trace_correction(p: SpectralPoint, n: int, kappa4: float) -> complex:
    """Deterministic approximation of ``<E G>`` including the ``1/n`` cumulant term.

    Returns ``m - i kappa4/(4n) * d(m^4)/deta``.
    """
    m = solve_m(p).m
    dm = dm_deta(p)
    return m - 1j * kappa4 / (4.0 * n) * 4.0 * m**3 * dm


def small_eta_expansion(z: complex, eta: float) -> complex:
    """Two-term small-``eta`` expansion of ``m^z(i eta)`` for ``|z| < 1``."""
    a = abs(z) ** 2
    return 1j * np.sign(eta) * np.sqrt(1 - a) + 1j * eta * (2 * a - 1) / (2 * (1 - a))
