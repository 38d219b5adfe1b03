"""Continuous-time TPDv flow and its exponential decay.

The flow is::

    u'   = I_V^{-1} G^u,          G^u = -(grad f(u) + B^T p)
    p'   = I_Q^{-1} G^p,          G^p = B u - b - B I_V^{-1} (grad f(u) + B^T p)
    I_Q' = gamma (S~ - I_Q)

and is integrated with the classical fourth-order Runge-Kutta method, with
``I_Q`` held as a dense symmetric matrix.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import DimensionError, SpdLossError
from .numerics import GradientOracle, SpdOperator, bregman_divergence, generalized_eigvals

DECAY_HEADER = ("t", "E", "bound", "margin")


@dataclass
class FlowState:
    u: np.ndarray
    p: np.ndarray
    iq_dense: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.iq_dense = np.asarray(self.iq_dense, dtype=float)
        if self.iq_dense.shape != (self.p.size, self.p.size):
            raise DimensionError("iq_dense must be square with the dual dimension")


@dataclass
class FlowProblem:
    """Data of the flow.

    Parameters
    ----------
    f : GradientOracle
    B, b : constraint ``B u = b``
    iv_of_t : callable
        ``t -> SpdOperator`` for the primal metric.
    stilde_of_t : callable
        ``t -> SpdOperator`` (materializable) for the Schur approximation.
    gamma_of_t : callable
        ``t -> float > 0``.
    bounds_of_t : callable, optional
        ``t -> (mu_f, L_f)`` relative to ``iv_of_t(t)``; needed by
        :func:`check_decay`.
    constant : bool
        Metrics do not depend on ``t``; lets the integrator cache them.
    """

    f: GradientOracle
    B: np.ndarray
    b: np.ndarray
    iv_of_t: Callable
    stilde_of_t: Callable
    gamma_of_t: Callable
    bounds_of_t: Optional[Callable] = None
    constant: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        B = self.B.toarray() if sp.issparse(self.B) else self.B
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.b.shape != (self.B.shape[0],):
            raise DimensionError("b does not match the rows of B")

    def operators(self, t: float):
        """``(I_V, S~ dense, gamma)`` at time ``t``."""
        key = None if self.constant else float(t)
        if key not in self._cache:
            if not self.constant:
                self._cache.clear()
            self._cache[key] = (self.iv_of_t(t), self.stilde_of_t(t).to_dense())
        iv, st = self._cache[key]
        g = float(self.gamma_of_t(t))
        if not g > 0:
            raise ValueError(f"gamma({t}) = {g} is not positive")
        return iv, st, g

    def schur(self, t: float) -> np.ndarray:
        iv = self.iv_of_t(t)
        S = self.B @ iv.inv_apply(self.B.T)
        return 0.5 * (S + S.T)


def _rhs(prob: FlowProblem, u, p, Q, t, frozen=None):
    if frozen is None:
        iv, st, gamma = prob.operators(t)
        w = iv.inv_apply(prob.f.grad(u) + prob.B.T @ p)
    else:
        vinv, st, gamma = frozen
        w = vinv @ (prob.f.grad(u) + prob.B.T @ p)
    gp = prob.B @ (u - w) - prob.b
    try:
        dp = np.linalg.solve(Q, gp)
    except np.linalg.LinAlgError as exc:
        raise SpdLossError(f"I_Q singular at t={t}: {exc}") from exc
    return -w, dp, gamma * (st - Q)


def flow_rhs(state: FlowState, prob: FlowProblem):
    """Right-hand side ``(du, dp, dIQ)`` at ``state``."""
    if state.u.size != prob.B.shape[1] or state.p.size != prob.B.shape[0]:
        raise DimensionError("state does not match the problem dimensions")
    try:
        return _rhs(prob, state.u, state.p, state.iq_dense, state.t)
    except SpdLossError as exc:
        exc.last_state = state
        raise


def _is_spd(Q) -> bool:
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        return False
    return True


def integrate(prob: FlowProblem, init: FlowState, t_end: float, dt: float,
              sample_every: int = 1) -> List[FlowState]:
    """Fourth-order Runge-Kutta integration sampled every ``sample_every`` steps.

    The final time is always sampled.  ``I_Q`` is symmetrized after each step
    and checked for positive definiteness by a Cholesky attempt.

    Raises
    ------
    SpdLossError
        Carries the last valid state.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    n_steps = int(round(t_end / dt))
    if abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a multiple of dt")
    if not _is_spd(init.iq_dense):
        raise SpdLossError("initial I_Q is not SPD", init)
    if init.u.size != prob.B.shape[1] or init.p.size != prob.B.shape[0]:
        raise DimensionError("state does not match the problem dimensions")

    t0 = float(init.t)
    u, p, Q = init.u.copy(), init.p.copy(), init.iq_dense.copy()
    frozen = None
    if prob.constant and n_steps > 0:
        # time-independent metrics: dense I_V^{-1} once instead of a solve per stage
        iv, st, gamma = prob.operators(t0)
        vinv = iv.inv_apply(np.eye(u.size))
        frozen = (0.5 * (vinv + vinv.T), st, gamma)
    traj = [FlowState(u, p, Q, t0)]
    h2 = dt / 2
    for i in range(1, n_steps + 1):
        t = t0 + (i - 1) * dt
        try:
            a = _rhs(prob, u, p, Q, t, frozen)
            b = _rhs(prob, u + h2 * a[0], p + h2 * a[1], Q + h2 * a[2], t + h2, frozen)
            c = _rhs(prob, u + h2 * b[0], p + h2 * b[1], Q + h2 * b[2], t + h2, frozen)
            d = _rhs(prob, u + dt * c[0], p + dt * c[1], Q + dt * c[2], t + dt, frozen)
        except SpdLossError as exc:
            exc.last_state = FlowState(u, p, Q, t)
            raise
        u = u + dt / 6 * (a[0] + 2 * b[0] + 2 * c[0] + d[0])
        p = p + dt / 6 * (a[1] + 2 * b[1] + 2 * c[1] + d[1])
        Qn = Q + dt / 6 * (a[2] + 2 * b[2] + 2 * c[2] + d[2])
        Qn = 0.5 * (Qn + Qn.T)
        if not _is_spd(Qn):
            raise SpdLossError(f"I_Q lost positive definiteness at t={t + dt}",
                               FlowState(u, p, Q, t))
        Q = Qn
        if i % sample_every == 0 or i == n_steps:
            traj.append(FlowState(u, p, Q, t0 + i * dt))
    return traj


# ---------------------------------------------------------------------------
# decay verification
# ---------------------------------------------------------------------------

def flow_beta(mu_f: float, L_f: float) -> float:
    """``(mu_f - 1/2) / (mu_f L_f)``; positive only when ``mu_f > 1/2``."""
    return (mu_f - 0.5) / (mu_f * L_f)


def flow_energy(state: FlowState, ustar, pstar, f: GradientOracle) -> float:
    dp = state.p - pstar
    return bregman_divergence(f, state.u, ustar) + 0.5 * float(dp @ state.iq_dense @ dp)


def decay_rate(prob: FlowProblem, t: float):
    """``(mu_tilde, beta, mu_f, mu_S)`` at time ``t``."""
    if prob.bounds_of_t is None:
        raise ValueError("decay check needs prob.bounds_of_t")
    mu_f, L_f = prob.bounds_of_t(t)
    mu_s = float(generalized_eigvals(prob.schur(t), prob.stilde_of_t(t).to_dense())[0])
    beta = flow_beta(mu_f, L_f)
    return beta * min(mu_f, mu_s), beta, mu_f, mu_s


@dataclass
class DecayReport:
    t: np.ndarray
    energy: np.ndarray
    bound: np.ndarray
    rtol: float
    hypothesis_met: bool = True
    atol: float = 0.0

    @property
    def margin(self) -> np.ndarray:
        return self.bound - self.energy

    @property
    def violations(self) -> np.ndarray:
        """Indices where ``E > bound (1 + rtol) + atol``; empty when the hypothesis fails."""
        if not self.hypothesis_met:
            return np.array([], dtype=int)
        return np.flatnonzero(self.energy > self.bound * (1.0 + self.rtol) + self.atol)

    @property
    def ok(self) -> bool:
        return self.hypothesis_met and self.violations.size == 0

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DECAY_HEADER)
        for row in zip(self.t, self.energy, self.bound, self.margin):
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def check_decay(trajectory: List[FlowState], ustar, pstar, prob: FlowProblem,
                rtol: float = 1e-6) -> DecayReport:
    """Compare ``E(t)`` with ``exp(-int_0^t mu_tilde) E(0)`` on the sample grid.

    The integral is the trapezoid rule over the sample times.  When
    ``mu_f <= 1/2`` at some sample the report is marked as not meeting the
    hypothesis and no violations are reported.  ``atol`` is a round-off
    floor, ``(1e3 eps)^2`` times the squared size of the saddle point and the
    initial ``I_Q``, so that a trajectory starting at the saddle passes.
    """
    t = np.array([s.t for s in trajectory])
    E = np.array([flow_energy(s, ustar, pstar, prob.f) for s in trajectory])
    if prob.constant:
        rate = decay_rate(prob, t[0])
        rates = [rate] * t.size
    else:
        rates = [decay_rate(prob, ti) for ti in t]
    mus = np.array([r[0] for r in rates])
    met = all(r[2] > 0.5 for r in rates)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (mus[1:] + mus[:-1]) * np.diff(t))])
    bound = np.exp(-integral) * E[0]
    scale = (1.0 + float(np.dot(ustar, ustar)) + float(np.dot(pstar, pstar))) \
        * max(1.0, float(np.abs(trajectory[0].iq_dense).max()))
    atol = (1e3 * np.finfo(float).eps) ** 2 * scale
    return DecayReport(t, E, bound, rtol, met, atol)


def state_dump(trajectory: List[FlowState], times, path=None) -> str:
    """CSV of full states ``t, u..., p...`` at the samples nearest ``times``."""
    ts = np.array([s.t for s in trajectory])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n, m = trajectory[0].u.size, trajectory[0].p.size
    w.writerow(["t"] + [f"u{i}" for i in range(n)] + [f"p{i}" for i in range(m)])
    for tq in times:
        s = trajectory[int(np.argmin(np.abs(ts - tq)))]
        w.writerow([repr(float(s.t))] + [repr(float(x)) for x in np.concatenate([s.u, s.p])])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# quadratic flows
# ---------------------------------------------------------------------------

def quadratic_flow(A, B, c, b, iv_of_t: Callable, stilde_of_t: Optional[Callable] = None,
                   constant: bool = False) -> FlowProblem:
    """Flow for ``u^T A u / 2 - c^T u`` with ``gamma(t) = beta(t) mu_{S,S~}(t)``.

    Bounds come from dense generalized eigensolves of ``(A, I_V(t))``;
    ``S~`` defaults to the exact ``S(t)``.
    """
    from .numerics import quadratic_oracle

    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    f = quadratic_oracle(A, c)

    def schur(t):
        S = B @ iv_of_t(t).inv_apply(B.T)
        return 0.5 * (S + S.T)

    if stilde_of_t is None:
        stilde_of_t = lambda t: SpdOperator.from_matrix(schur(t))  # noqa: E731

    memo = {}

    def consts(t):
        key = 0.0 if constant else float(t)
        if key not in memo:
            if not constant:
                memo.clear()
            lam = generalized_eigvals(A, iv_of_t(t).to_dense())
            mu_f, L_f = float(lam[0]), float(lam[-1])
            mu_s = float(generalized_eigvals(schur(t), stilde_of_t(t).to_dense())[0])
            memo[key] = (mu_f, L_f, flow_beta(mu_f, L_f) * mu_s)
        return memo[key]

    return FlowProblem(f, B, b, iv_of_t, stilde_of_t,
                       gamma_of_t=lambda t: consts(t)[2],
                       bounds_of_t=lambda t: consts(t)[:2], constant=constant)


def interpolated_metric(M0, M1, period: float = 1.0) -> Callable:
    """``t -> (1 - s) M0 + s M1`` with ``s = (1 - cos(2 pi t / period)) / 2``."""
    M0 = np.asarray(M0, dtype=float)
    M1 = np.asarray(M1, dtype=float)

    def iv(t):
        s = 0.5 * (1.0 - math.cos(2.0 * math.pi * t / period))
        return SpdOperator.from_matrix((1.0 - s) * M0 + s * M1)
    return iv
