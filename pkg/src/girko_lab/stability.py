"""Stability operator ``B12 = 1 - M1 S[.] M2`` on block-constant matrices.

On the four-dimensional space of block-constant matrices ``B12`` has
eigenvalues ``(1, 1, beta_+, beta_-)``.  ``F`` and ``F^*`` are fixed, and
``R_+`` and ``R_-`` are given in closed form.  On block-traceless matrices
``B12`` is the identity.  The deterministic two-resolvent approximation
``M12^A = B12^{-1}[M1 A M2]`` is obtained by dividing the ``R_+`` and
``R_-`` components by their eigenvalues.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .blocks import EMINUS, BlockConstant, s_op
from .mde import SpectralPoint, build_M, solve_m

__all__ = [
    "StabilityError",
    "StabilityPair",
    "apply_B12",
    "apply_B12_adjoint",
    "apply_B12_full",
    "block_decompose",
    "eigendecompose",
    "m12",
    "m12_full",
    "operator_matrix",
    "project_minus",
    "s_op",
    "s_op_full",
    "trace_m12_I",
]

log = logging.getLogger(__name__)

BETA_MINUS_TOL = 1e-13
DEGENERATE_S_TOL = 1e-14
RESONANCE_TOL = 1e-3


class StabilityError(ArithmeticError):
    """Raised near a singular or degenerate point of the stability operator."""


@dataclass(frozen=True)
class StabilityPair:
    """Spectral data of ``B12`` for the spectral points ``p1`` and ``p2``.

    ``on_branch_cut`` is set when ``s`` lies on the negative real axis.  The
    principal square root is then taken with a ``+0j`` imaginary part.
    """

    p1: SpectralPoint
    p2: SpectralPoint
    m1: complex
    u1: complex
    m2: complex
    u2: complex
    M1: BlockConstant
    M2: BlockConstant
    s: complex
    beta_plus: complex
    beta_minus: complex
    R_plus: BlockConstant
    R_minus: BlockConstant
    L_plus: BlockConstant
    L_minus: BlockConstant
    on_branch_cut: bool = False


def apply_B12(pair: StabilityPair, R: BlockConstant) -> BlockConstant:
    """``R - M1 S[R] M2``."""
    return R - pair.M1 @ s_op(R) @ pair.M2


def apply_B12_adjoint(pair: StabilityPair, Q: BlockConstant) -> BlockConstant:
    """Adjoint of ``B12`` for the pairing ``<A^* B>``: ``Q - S[M1^* Q M2^*]``."""
    return Q - s_op(pair.M1.H @ Q @ pair.M2.H)


def operator_matrix(pair: StabilityPair) -> np.ndarray:
    """``4 x 4`` matrix of ``B12`` in the basis ``(b11, b12, b21, b22)``."""
    cols = []
    for k in range(4):
        e = np.zeros(4, dtype=complex)
        e[k] = 1.0
        cols.append(apply_B12(pair, BlockConstant(*e)).matrix.ravel())
    return np.column_stack(cols)


def _pairs_data(p1: SpectralPoint, p2: SpectralPoint) -> tuple:
    s1, s2 = solve_m(p1), solve_m(p2)
    zz = p1.z * np.conj(p2.z)
    return s1.m, s1.u, s2.m, s2.u, zz.real, zz.imag


def eigendecompose(p1: SpectralPoint, p2: SpectralPoint) -> StabilityPair:
    """Closed-form eigenvalues and left/right eigenvectors of ``B12``.

    Raises
    ------
    StabilityError
        If ``|s| < 1e-14``, where ``R_+`` and ``R_-`` coalesce.
    """
    m1, u1, m2, u2, re, im = _pairs_data(p1, p2)
    s = m1**2 * m2**2 - u1**2 * u2**2 * im**2
    s = complex(s)
    if abs(s) < DEGENERATE_S_TOL:
        raise StabilityError(f"degenerate stability pair: |s| = {abs(s):.3e}")
    on_cut = s.real < 0 and abs(s.imag) <= 1e-15 * abs(s)
    if on_cut:
        log.info("s = %r lies on the branch cut; using the +i branch", s)
        s = complex(s.real, 0.0)
    sq = np.sqrt(s)
    base = -u1 * u2 * re
    vecs = {}
    for sign in (1, -1):
        den = 1j * u1 * u2 * im - sign * sq
        diag = base + sign * sq
        R = BlockConstant(
            diag,
            p1.z * u1 * m2 + p2.z * u2 * m1**2 * m2 / den,
            np.conj(p2.z) * u2 * m1 + np.conj(p1.z) * u1 * m2**2 * m1 / den,
            m1 * m2 / den * diag,
        )
        L = BlockConstant(den / (m1 * m2), 0, 0, 1)
        vecs[sign] = (1 + sign * sq - u1 * u2 * re, R, L)
    return StabilityPair(
        p1=p1,
        p2=p2,
        m1=m1,
        u1=u1,
        m2=m2,
        u2=u2,
        M1=build_M(p1),
        M2=build_M(p2),
        s=s,
        beta_plus=vecs[1][0],
        beta_minus=vecs[-1][0],
        R_plus=vecs[1][1],
        R_minus=vecs[-1][1],
        L_plus=vecs[1][2],
        L_minus=vecs[-1][2],
        on_branch_cut=on_cut,
    )


def m12(pair: StabilityPair, A: BlockConstant) -> BlockConstant:
    """Deterministic approximation ``M12^A = B12^{-1}[M1 A M2]``.

    The ``R_+``/``R_-`` components of ``M1 A M2`` are read off with the left
    eigenvectors and divided by ``beta_+``/``beta_-``.  The remainder lies in
    ``span{F, F^*}``, where ``B12`` acts as the identity.  When
    ``|<L_+ R_+>| < 1e-3`` the ``R_+`` direction is ill-conditioned, so the
    4 x 4 system is solved directly instead.
    """
    if abs(pair.beta_minus) <= BETA_MINUS_TOL:
        raise StabilityError(f"beta_- is singular: |beta_-| = {abs(pair.beta_minus):.3e}")
    Q = pair.M1 @ A @ pair.M2
    lr_plus = (pair.L_plus @ pair.R_plus).trace()
    if abs(lr_plus) < RESONANCE_TOL:
        x = np.linalg.solve(operator_matrix(pair), Q.matrix.ravel())
        return BlockConstant(*x)
    lr_minus = (pair.L_minus @ pair.R_minus).trace()
    c_plus = (pair.L_plus @ Q).trace() / lr_plus
    c_minus = (pair.L_minus @ Q).trace() / lr_minus
    rest = Q - c_plus * pair.R_plus - c_minus * pair.R_minus
    return (c_plus / pair.beta_plus) * pair.R_plus + (c_minus / pair.beta_minus) * pair.R_minus + rest


def trace_m12_I(p1: SpectralPoint, p2: SpectralPoint) -> complex:
    """Closed form of ``<M12^I>``."""
    m1, u1, m2, u2, re, _ = _pairs_data(p1, p2)
    uu = u1 * u2
    den = 1 + abs(p1.z * p2.z) ** 2 * uu**2 - m1**2 * m2**2 - 2 * uu * re
    if abs(den) < BETA_MINUS_TOL:
        raise StabilityError(f"denominator of <M12^I> is singular: {abs(den):.3e}")
    return complex((m1 * m2 + 1 - re * uu) / den - 1)


def project_minus(pair: StabilityPair, Q: BlockConstant) -> BlockConstant:
    """Rank-one projection ``<R_-^* Q> / <R_-^* L_-^*> L_-^*``."""
    Lstar = pair.L_minus.H
    norm = (pair.R_minus.H @ Lstar).trace()
    if abs(norm) < 1e-14:
        raise StabilityError("vanishing pairing <R_-^* L_-^*>")
    return ((pair.R_minus.H @ Q).trace() / norm) * Lstar


# ---------------------------------------------------------------------------
# full 2n x 2n matrices


def _blocks(A: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, int]:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] % 2:
        raise ValueError(f"expected a square matrix of even dimension, got shape {A.shape}")
    n = A.shape[0] // 2
    return A[:n, :n], A[:n, n:], A[n:, :n], A[n:, n:], n


def _block_traces(A: np.ndarray) -> BlockConstant:
    a11, a12, a21, a22, n = _blocks(A)
    return BlockConstant(np.trace(a11) / n, np.trace(a12) / n, np.trace(a21) / n, np.trace(a22) / n)


def block_decompose(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``A`` into block-constant coefficients and a block-traceless rest.

    Returns
    -------
    coeffs : ndarray of shape (4,)
        Coefficients of ``(I, E_-, F, F^*)``, i.e.
        ``(<A>, <A E_->, 2<A F^*>, 2<A F>)``.
    traceless : ndarray
        ``A`` minus the block-constant part; all four block traces vanish.
    """
    bt = _block_traces(A)
    coeffs = np.array([0.5 * (bt.b11 + bt.b22), 0.5 * (bt.b11 - bt.b22), bt.b12, bt.b21])
    n = A.shape[0] // 2
    return coeffs, np.asarray(A) - bt.embed(n)


def s_op_full(R: np.ndarray) -> np.ndarray:
    """Covariance operator on a full ``2n x 2n`` matrix."""
    n = R.shape[0] // 2
    return s_op(_block_traces(R)).embed(n)


def apply_B12_full(pair: StabilityPair, R: np.ndarray) -> np.ndarray:
    n = R.shape[0] // 2
    return R - pair.M1.embed(n) @ s_op_full(R) @ pair.M2.embed(n)


def m12_full(pair: StabilityPair, A: np.ndarray) -> np.ndarray:
    """``B12^{-1}[M1 A M2]`` for a full ``2n x 2n`` matrix ``A``.

    The block-constant part goes through :func:`m12`.  On the block-traceless
    part ``B12`` is the identity.
    """
    n = A.shape[0] // 2
    bt = _block_traces(A)
    rest = np.asarray(A) - bt.embed(n)
    return m12(pair, bt).embed(n) + pair.M1.embed(n) @ rest @ pair.M2.embed(n)
