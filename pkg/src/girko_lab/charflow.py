"""Characteristic flow of the generalised spectral parameter.

Each characteristic ``Lambda_t = [[i eta_t, z_t], [conj(z_t), i eta_t]]``
follows ``d/dt Lambda = -Lambda/2 - S[M(Lambda)]``.  The flow has the exact
solution

    m_t = e^{t/2} m_0,   u_t = e^t u_0,   z_t = e^{-t/2} z_0,
    eta_t = e^{-t/2} eta_0 - (e^{t/2} - e^{-t/2}) Im m_0,

which holds because ``w_t + m_t = e^{-t/2} (w_0 + m_0)``.  The RK4
integrator exists to check this closed form against the ODE itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .blocks import IDENTITY, BlockConstant, s_op
from .mde import SolverError, SpectralPoint, build_M, dyson_residual, solve_m
from .stability import eigendecompose, m12

__all__ = [
    "FlowError",
    "FlowState",
    "backward_shoot",
    "flow_closed_form",
    "integrate_flow",
    "m12_bound",
    "m12_bound_coeffs",
    "m12_flow_derivative",
    "m_flow_derivative",
    "make_state",
    "max_time",
    "trace_m12_along",
]

CONSERVATION_TOL = 1e-9


class FlowError(RuntimeError):
    """A characteristic reached (or would cross) the real axis."""


def _speed(p: SpectralPoint, m: complex) -> float:
    # -sgn(eta) * d eta/dt with d eta/dt = -eta/2 - Im m
    return abs(p.eta) / 2 + abs(m.imag)


@dataclass(frozen=True)
class FlowState:
    """Two characteristics at time ``t`` with their Dyson solutions and speeds."""

    p1: SpectralPoint
    p2: SpectralPoint
    t: float
    c1: float
    c2: float
    m1: complex
    m2: complex

    @property
    def points(self) -> tuple[SpectralPoint, SpectralPoint]:
        return self.p1, self.p2


def make_state(p1: SpectralPoint, p2: SpectralPoint, t: float = 0.0) -> FlowState:
    """Build a :class:`FlowState` by solving the Dyson equation at both points."""
    m1, m2 = solve_m(p1).m, solve_m(p2).m
    return FlowState(p1, p2, float(t), _speed(p1, m1), _speed(p2, m2), m1, m2)


def max_time(p: SpectralPoint) -> float:
    """Time ``T*`` at which the characteristic started at ``p`` hits the real axis.

    Setting ``eta_t = 0`` in the closed form gives ``eta_0 = (e^t - 1) Im m_0``,
    so ``T* = log(1 + eta_0 / Im m_0)``.
    """
    y = solve_m(p).m.imag
    return math.log1p(p.eta / y)


def eta_closed_form(p: SpectralPoint, m0: complex, t: float) -> float:
    return math.exp(-t / 2) * p.eta - 2.0 * math.sinh(t / 2) * m0.imag


def _evolve(p: SpectralPoint, m0: complex, t: float) -> tuple[SpectralPoint, complex]:
    eta_t = eta_closed_form(p, m0, t)
    if eta_t == 0.0 or np.sign(eta_t) != np.sign(p.eta):
        raise FlowError(f"characteristic from {p} crosses the real axis before t = {t}")
    return SpectralPoint(math.exp(-t / 2) * p.z, eta_t), math.exp(t / 2) * m0


def flow_closed_form(state0: FlowState, t: float) -> FlowState:
    """Evolve both characteristics by time ``t`` using the exact solution.

    Raises
    ------
    FlowError
        If ``t`` is at or beyond ``T*`` for either characteristic, or if the
        transported ``m_t`` fails to solve the Dyson equation at the new point
        to ``1e-9``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    out = []
    for p, m0 in ((state0.p1, state0.m1), (state0.p2, state0.m2)):
        if t >= max_time(p):
            raise FlowError(f"t = {t} is past T* = {max_time(p)} for {p}")
        q, mt = _evolve(p, m0, t)
        res = float(dyson_residual(q.z, q.eta, mt))
        if res > CONSERVATION_TOL * max(1.0, 1.0 / abs(mt)):
            raise FlowError(f"transported m_t misses the Dyson equation at {q}: residual {res:.3e}")
        out.append((q, mt))
    (q1, m1), (q2, m2) = out
    return FlowState(q1, q2, state0.t + t, _speed(q1, m1), _speed(q2, m2), m1, m2)


def _rhs(lam: BlockConstant) -> BlockConstant:
    p = SpectralPoint(lam.b12, lam.b11.imag)
    return -0.5 * lam - s_op(build_M(p))


def _rk4_point(p: SpectralPoint, t: float, steps: int) -> SpectralPoint:
    sgn = np.sign(p.eta)
    lam = BlockConstant(1j * p.eta, p.z, np.conj(p.z), 1j * p.eta)
    h = t / steps

    def f(x: BlockConstant) -> BlockConstant:
        if np.sign(x.b11.imag) != sgn or x.b11.imag == 0:
            raise FlowError("characteristic crossed the real axis during integration")
        try:
            return _rhs(x)
        except SolverError as exc:  # pragma: no cover - bulk points never fail
            raise FlowError(f"Dyson solve failed inside the integrator: {exc}") from exc

    for _ in range(steps):
        k1 = f(lam)
        k2 = f(lam + (h / 2) * k1)
        k3 = f(lam + (h / 2) * k2)
        k4 = f(lam + h * k3)
        lam = lam + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
    return SpectralPoint(lam.b12, lam.b11.imag)


def integrate_flow(state0: FlowState, t: float, dt: float | None = None) -> FlowState:
    """Integrate the characteristic ODE with classical fixed-step RK4.

    Parameters
    ----------
    state0 : FlowState
    t : float
        Total time, smaller than ``T*`` of both characteristics.
    dt : float, optional
        Nominal step; the step actually used is ``t / ceil(t / dt)``.
        Defaults to ``min(1e-3, T*/100)``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    tstar = min(max_time(state0.p1), max_time(state0.p2))
    if t >= tstar:
        raise FlowError(f"t = {t} is past T* = {tstar}")
    if t == 0:
        return state0
    if dt is None:
        dt = min(1e-3, tstar / 100)
    if dt <= 0 or dt > t:
        raise ValueError("need 0 < dt <= t")
    steps = math.ceil(t / dt - 1e-12)
    q1 = _rk4_point(state0.p1, t, steps)
    q2 = _rk4_point(state0.p2, t, steps)
    s = make_state(q1, q2)
    return replace(s, t=state0.t + t)


def backward_shoot(target: SpectralPoint, T: float) -> SpectralPoint:
    """Initial point whose characteristic reaches ``target`` at time ``T``.

    ``z_0 = e^{T/2} z`` is explicit.  ``eta_0`` solves ``eta_T(eta_0) = eta``
    on the closed form with Brent's method, and ``eta_T`` is monotone in
    ``eta_0``.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if T == 0:
        return target
    z0 = math.exp(T / 2) * target.z
    sgn = math.copysign(1.0, target.eta)
    eta = abs(target.eta)

    def g(e0: float) -> float:
        p = SpectralPoint(z0, sgn * e0)
        return sgn * eta_closed_form(p, solve_m(p).m, T) - eta

    lo = eta
    # |Im m| <= 1 in the bulk, so eta_T >= e^{-T/2} eta_0 - 2 sinh(T/2).
    hi = math.exp(T / 2) * (eta + 2 * math.sinh(T / 2)) * 1.01 + 1e-12
    glo, ghi = g(lo), g(hi)
    if not (glo < 0 < ghi):
        raise FlowError(f"cannot bracket eta_0 for target {target}, T = {T}: g = ({glo}, {ghi})")
    e0 = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return SpectralPoint(z0, sgn * e0)


def _trace_m12(state: FlowState, A: BlockConstant, B: BlockConstant) -> complex:
    return (m12(eigendecompose(state.p1, state.p2), A) @ B).trace()


def trace_m12_along(state: FlowState) -> complex:
    """``<M12^I>`` at the current state."""
    return _trace_m12(state, IDENTITY, IDENTITY)


def m12_flow_derivative(state: FlowState, A: BlockConstant, B: BlockConstant, h: float = 1e-5) -> tuple[complex, complex]:
    """Compare ``d/dt <M12^A B>`` along the flow with its closed form.

    Returns
    -------
    lhs : complex
        Central difference of ``<M12^A B>`` over ``[t-h, t+h]``.  The state
        at ``t-h`` is obtained by backward shooting.
    rhs : complex
        ``<M12^A B> + <S[M12^A] M21^B>``.
    """
    back = make_state(backward_shoot(state.p1, h), backward_shoot(state.p2, h))
    fwd = flow_closed_form(state, h)
    lhs = (_trace_m12(fwd, A, B) - _trace_m12(back, A, B)) / (2 * h)
    pair12 = eigendecompose(state.p1, state.p2)
    pair21 = eigendecompose(state.p2, state.p1)
    M12A = m12(pair12, A)
    M21B = m12(pair21, B)
    rhs = (M12A @ B).trace() + (s_op(M12A) @ M21B).trace()
    return complex(lhs), complex(rhs)


def m_flow_derivative(p: SpectralPoint, h: float = 1e-5) -> tuple[BlockConstant, BlockConstant]:
    """Central difference of ``M`` along one characteristic and ``M/2``."""
    m0 = solve_m(p).m
    plus, _ = _evolve(p, m0, h)
    back = backward_shoot(p, h)
    lhs = (build_M(plus) - build_M(back)) / (2 * h)
    return lhs, build_M(p) * 0.5


def m12_bound_coeffs(state0: FlowState) -> tuple[float, float]:
    """Coefficients ``(a0, b0)`` of the bound ``|<M12,t^I>| <~ a0 / (b0 - a0 t)``."""
    z1, z2 = state0.p1.z, state0.p2.z
    a0 = 2 - abs(z1) ** 2 - abs(z2) ** 2
    b0 = (
        abs(z1 - z2) ** 2
        + abs(state0.p1.eta) * math.sqrt(1 - abs(z1) ** 2)
        + abs(state0.p2.eta) * math.sqrt(1 - abs(z2) ** 2)
    )
    return a0, b0


def m12_bound(state0: FlowState, t: float) -> float:
    """``a0 / (b0 - a0 t)``; raises :class:`FlowError` once the bound has expired."""
    a0, b0 = m12_bound_coeffs(state0)
    gap = b0 - a0 * t
    if gap <= 0:
        raise FlowError(f"bound expired: b0 - a0 t = {gap:.3e}")
    return a0 / gap
