"""Resolvents of Hermitized samples, local-law errors and singular-vector overlaps.

The eigenvectors of ``H^z`` at ``+/- lambda_i`` are ``(u_i, +/- v_i)``.  Here
``sqrt(2) u_i`` and ``sqrt(2) v_i`` are the left and right singular vectors
of ``X - z`` for the singular value ``lambda_i``.  Trace quantities
therefore reduce to the singular values, e.g.
``<G(i eta)> = (i eta / n) sum_k 1 / (sigma_k^2 + eta^2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .blocks import BlockConstant
from .ensembles import hermitize
from .mde import SpectralPoint, build_M
from .stability import eigendecompose, m12

__all__ = [
    "SpectralData",
    "SymmetryError",
    "block_trace",
    "goodll_bound",
    "overlap_matrix",
    "overlap_squares",
    "resolve",
    "resolve_many",
    "single_law_error",
    "spectral_data",
    "trace_G",
    "trace_imG_product",
    "two_resolvent_error",
]

SYMMETRY_TOL = 1e-8
EIGEN_PATH_MIN_ETAS = 8


class SymmetryError(ValueError):
    """The spectrum of a supposed Hermitization is not symmetric."""


@dataclass(frozen=True)
class SpectralData:
    """Eigen-decomposition of ``H^z`` organised by the ``+/-`` symmetry.

    Attributes
    ----------
    lambdas : ndarray, shape (2n,)
        Sorted eigenvalues.
    U, V : ndarray, shape (n, n)
        Column ``i`` holds the two halves of the eigenvector of the ``i``-th
        smallest positive eigenvalue ``lambdas[n + i]``; each has squared
        norm ``1/2``.
    W : ndarray, shape (2n, 2n)
        Full eigenvector matrix, columns ordered like ``lambdas``.
    """

    lambdas: np.ndarray
    U: np.ndarray
    V: np.ndarray
    W: np.ndarray


def resolve(H: np.ndarray, eta: float) -> np.ndarray:
    """``(H - i eta)^{-1}`` by a dense LU factorisation."""
    if eta == 0:
        raise ValueError("eta must be nonzero")
    N = H.shape[0]
    I = np.eye(N, dtype=complex)
    lu = sla.lu_factor(H - 1j * eta * I, check_finite=False)
    return sla.lu_solve(lu, I, check_finite=False)


def resolve_many(H: np.ndarray, etas) -> list[np.ndarray]:
    """Resolvents at several ``eta``.

    From eight values upward a single eigendecomposition is cheaper than one
    factorisation per ``eta``.
    """
    etas = list(etas)
    if len(etas) < EIGEN_PATH_MIN_ETAS:
        return [resolve(H, e) for e in etas]
    lam, W = np.linalg.eigh(H)
    Wh = W.conj().T
    return [(W / (lam - 1j * e)) @ Wh for e in etas]


def spectral_data(H: np.ndarray) -> SpectralData:
    """Hermitian eigendecomposition of a Hermitization, paired by symmetry.

    Raises
    ------
    SymmetryError
        If ``lambda[k] + lambda[2n-1-k]`` exceeds ``1e-8 * ||H||``.
    """
    lam, W = np.linalg.eigh(H)
    N = H.shape[0]
    n = N // 2
    scale = max(np.max(np.abs(lam)), 1.0)
    asym = np.max(np.abs(lam + lam[::-1]))
    if N % 2 or asym > SYMMETRY_TOL * scale:
        raise SymmetryError(f"spectrum is not +/- symmetric (defect {asym:.3e})")
    pos = W[:, n:]
    return SpectralData(lambdas=lam, U=pos[:n, :], V=pos[n:, :], W=W)


def block_trace(G: np.ndarray) -> BlockConstant:
    """Normalised traces of the four ``n x n`` blocks of ``G``."""
    n = G.shape[0] // 2
    return BlockConstant(
        np.trace(G[:n, :n]) / n, np.trace(G[:n, n:]) / n, np.trace(G[n:, :n]) / n, np.trace(G[n:, n:]) / n
    )


def trace_G(svals: np.ndarray, eta: float) -> complex:
    """``<G^z(i eta)>`` from the singular values of ``X - z``."""
    s2 = np.asarray(svals) ** 2
    return complex(1j * eta * np.mean(1.0 / (s2 + eta * eta)))


def single_law_error(X: np.ndarray, p: SpectralPoint, A: BlockConstant) -> tuple[float, float]:
    """``|<A (G - M)>|`` and the normalised error ``n |eta| |<A (G - M)>|``."""
    n = X.shape[0]
    G = resolve(hermitize(X, p.z), p.eta)
    err = abs((A @ (block_trace(G) - build_M(p))).trace())
    return err, n * abs(p.eta) * err


def goodll_bound(n: int, p1: SpectralPoint, p2: SpectralPoint) -> float:
    """Right side of the two-resolvent local law with the ``n^xi`` factor set to 1."""
    e_lo = min(abs(p1.eta), abs(p2.eta))
    e_hi = max(abs(p1.eta), abs(p2.eta))
    dz2 = abs(p1.z - p2.z) ** 2
    bracket = e_lo ** (1 / 6) + n ** (-0.1) + 1 / np.sqrt(n * e_lo) + (e_hi / (e_hi + dz2)) ** 0.25
    return float(bracket / (n * e_lo**1.5 * e_hi**0.5))


def _block_mul_left(A: BlockConstant, G: np.ndarray) -> np.ndarray:
    # (A (x) I_n) @ G without forming the Kronecker product
    n = G.shape[0] // 2
    top, bot = G[:n], G[n:]
    return np.vstack([A.b11 * top + A.b12 * bot, A.b21 * top + A.b22 * bot])


def two_resolvent_error(
    X: np.ndarray, p1: SpectralPoint, p2: SpectralPoint, A: BlockConstant, B: BlockConstant
) -> tuple[float, float]:
    """Error of ``<G1 A G2 B>`` against ``<M12^A B>``, plus the predicted bound."""
    n = X.shape[0]
    G1 = resolve(hermitize(X, p1.z), p1.eta)
    G2 = resolve(hermitize(X, p2.z), p2.eta)
    AG2B = _block_mul_left(A, G2)
    AG2B = _block_mul_left(B.H, AG2B.conj().T).conj().T  # right-multiplication by B
    tr = np.sum(G1 * AG2B.T) / (2 * n)
    det = (m12(eigendecompose(p1, p2), A) @ B).trace()
    return float(abs(tr - det)), goodll_bound(n, p1, p2)


def _svd_pair(X: np.ndarray, z1: complex, z2: complex):
    n = X.shape[0]
    I = np.eye(n)
    U1, s1, V1h = np.linalg.svd(X - z1 * I)
    U2, s2, V2h = np.linalg.svd(X - z2 * I)
    # numpy orders singular values decreasingly; flip to increasing
    return (U1[:, ::-1], s1[::-1], V1h[::-1].conj().T), (U2[:, ::-1], s2[::-1], V2h[::-1].conj().T)


def overlap_matrix(X: np.ndarray, z1: complex, z2: complex, k: int) -> np.ndarray:
    """Overlaps ``|<u_i^{z1}, u_j^{z2}>| + |<v_i^{z1}, v_j^{z2}>|`` for the ``k`` lowest indices.

    The halves ``u, v`` carry squared norm ``1/2``, so identical vectors give 1.
    """
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k = {k}")
    (U1, _, V1), (U2, _, V2) = _svd_pair(X, z1, z2)
    uu = np.abs(U1[:, :k].conj().T @ U2[:, :k])
    vv = np.abs(V1[:, :k].conj().T @ V2[:, :k])
    return 0.5 * (uu + vv)


def overlap_squares(X: np.ndarray, z1: complex, z2: complex):
    """Squared overlaps of all singular-vector halves and both singular spectra.

    Returns ``(s1, s2, UU, VV)`` with ``UU[i, j] = |<u_i^{z1}, u_j^{z2}>|^2``
    in the ``1/2`` normalisation.
    """
    (U1, s1, V1), (U2, s2, V2) = _svd_pair(X, z1, z2)
    UU = np.abs(U1.conj().T @ U2) ** 2 / 4
    VV = np.abs(V1.conj().T @ V2) ** 2 / 4
    return s1, s2, UU, VV


def trace_imG_product(X: np.ndarray, z1: complex, z2: complex, eta: float) -> float:
    """``eta^2 Tr(Im G^{z1}(i eta) Im G^{z2}(i eta))`` from the overlaps.

    With ``Im G = sum_{j>0} 2 eta / (lambda_j^2 + eta^2) diag(u_j u_j^*, v_j v_j^*)``
    the trace becomes
    ``sum_{i,j} 4 eta^4 (|<u_i,u_j>|^2 + |<v_i,v_j>|^2) / ((lambda_i^2+eta^2)(lambda_j^2+eta^2))``.
    """
    s1, s2, UU, VV = overlap_squares(X, z1, z2)
    d1 = 1.0 / (s1**2 + eta**2)
    d2 = 1.0 / (s2**2 + eta**2)
    return float(4 * eta**4 * d1 @ (UU + VV) @ d2)
