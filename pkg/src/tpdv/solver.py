"""Transformed primal-dual iterations with variable preconditioners.

One explicit step, in the computationally favorable ordering::

    u_half  = u_k - I_V^{-1} (grad f(u_k) + B^T p_k)
    I_Q'    = (I_Q + a g S~) / (1 + a g)
    p_{k+1} = p_k + a I_Q'^{-1} (B u_half - b)
    u_{k+1} = (1 - a) u_k + a u_half

The IMEX variant replaces the last line by the implicit relation
``u_{k+1} = u_k - a I_V^{-1} (grad~ f(u_{k+1}) + B^T p_{k+1})``; the inexact
Uzawa method is the explicit step with ``a = 1``.
"""
from __future__ import annotations

import csv
import io
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, List, NamedTuple, Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    ContractNotApplicable,
    DimensionError,
    ImplicitSolveError,
    SolverError,
    UnsupportedOperation,
)
from .numerics import (
    GradientOracle,
    SpdOperator,
    bregman_divergence,
    canonical_csr,
    convex_combination,
    estimate_extreme_eigs,
    generalized_eigvals,
    weighted_norm_sq,
)

MODES = ("explicit", "imex", "uzawa")
PARAM_MODES = ("practical", "theoretical")
CSV_HEADER = ("k", "residual_inf", "residual_u_inf", "residual_p_inf",
              "lyapunov", "alpha", "gamma", "vcycles")

# rank of B is checked densely up to this many entries
_RANK_CHECK_LIMIT = 250_000


@dataclass
class PrimalDualState:
    u: np.ndarray
    p: np.ndarray
    iq: SpdOperator
    k: int = 0


@dataclass
class SaddleProblem:
    """``min f(u)  s.t.  B u = b`` together with its preconditioner sequence.

    Parameters
    ----------
    f : GradientOracle
    B : array or sparse matrix, shape (m, n)
    b : array, shape (m,)
    iv_factory : callable
        ``state -> SpdOperator``, the primal metric ``I_{V,k}``.
    stilde_factory : callable
        ``(state, iv) -> SpdOperator``, the Schur complement approximation.
    implicit_substep : callable, optional
        ``(u_k, p_next, alpha, iv) -> u_next`` solving the implicit primal
        update of the IMEX scheme.
    implicit_gradient : callable, optional
        ``(u_next, u_k) -> vector``, the (possibly semi-linearized) gradient
        appearing in the implicit relation; defaults to ``f.grad(u_next)``.
    iq_update : callable, optional
        ``(iq, stilde, alpha, gamma) -> SpdOperator`` replacing
        :func:`update_iq`, e.g. when ``I_Q^{-1}`` is realized by multigrid.
    iq0_factory : callable, optional
        ``(state, iv) -> SpdOperator`` for the initial dual metric; defaults to
        ``stilde_factory``.
    project_dual : callable, optional
        Applied to every new dual iterate (e.g. zero-mean normalization).
    check_rank : bool
        Verify that ``B`` has full row rank on small problems.
    """

    f: GradientOracle
    B: object
    b: np.ndarray
    iv_factory: Callable
    stilde_factory: Callable
    implicit_substep: Optional[Callable] = None
    implicit_gradient: Optional[Callable] = None
    iq_update: Optional[Callable] = None
    iq0_factory: Optional[Callable] = None
    project_dual: Optional[Callable] = None
    check_rank: bool = True

    def __post_init__(self):
        self.B = canonical_csr(self.B) if sp.issparse(self.B) else np.asarray(self.B, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        m, n = self.B.shape
        if self.b.shape != (m,):
            raise DimensionError(f"b has shape {self.b.shape}, B has {m} rows")
        if n != self.f.dim:
            raise DimensionError(f"B has {n} columns, f has dim {self.f.dim}")
        if self.check_rank and m * n <= _RANK_CHECK_LIMIT:
            Bd = self.B.toarray() if sp.issparse(self.B) else self.B
            if np.linalg.matrix_rank(Bd) < m:
                raise ValueError("B does not have full row rank")

    @property
    def n_primal(self) -> int:
        return self.B.shape[1]

    @property
    def n_dual(self) -> int:
        return self.B.shape[0]

    def Bt(self, p):
        return self.B.T @ p

    def residuals(self, u, p):
        """``(grad f(u) + B^T p, B u - b)``."""
        return self.f.grad(u) + self.B.T @ p, self.B @ u - self.b

    def schur(self, iv: SpdOperator) -> np.ndarray:
        """Dense ``B I_V^{-1} B^T`` (desk-scale problems only)."""
        Bd = self.B.toarray() if sp.issparse(self.B) else self.B
        S = Bd @ iv.inv_apply(Bd.T)
        return 0.5 * (S + S.T)


@dataclass(frozen=True)
class TpdvParams:
    """Step parameters.

    In ``practical`` mode ``alpha`` and ``gamma`` are used as given at every
    iteration; in ``theoretical`` mode they are recomputed each iteration from
    eigenvalue bounds and the given values only seed the step-size search.
    Uzawa mode forces ``alpha = 1``.
    """

    alpha: float
    gamma: float
    beta: Optional[float] = None
    mode: str = "explicit"
    param_mode: str = "practical"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.param_mode not in PARAM_MODES:
            raise ValueError(f"param_mode must be one of {PARAM_MODES}")
        if self.mode == "uzawa":
            object.__setattr__(self, "alpha", 1.0)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


class TheoremParams(NamedTuple):
    beta: float
    gamma: float
    alpha: float
    rate: float


def compute_theorem_params(L_f: float, mu_s: float, L_s: float) -> TheoremParams:
    """Parameters guaranteeing linear decay of the discrete Lyapunov function.

    Assumes the primal metric is scaled so that ``mu_{f,I_V} = 1``.  Returns
    ``beta = 1/(2 L_f)``, ``gamma = beta mu_s``,
    ``alpha = beta / (4 (L_f + L_s)) min(mu_s / L_s, 1)`` and the rate
    ``1 - min(alpha gamma / (1 + alpha gamma), alpha beta) / 2``.
    """
    if not (L_f > 0 and mu_s > 0 and L_s > 0):
        raise ValueError("L_f, mu_s and L_s must be positive")
    beta = 1.0 / (2.0 * L_f)
    gamma = beta * mu_s
    alpha = beta / (4.0 * (L_f + L_s)) * min(mu_s / L_s, 1.0)
    return TheoremParams(beta, gamma, alpha, theorem_rate(alpha, beta, gamma))


def theorem_rate(alpha: float, beta: float, gamma: float) -> float:
    ag = alpha * gamma
    return 1.0 - 0.5 * min(ag / (1.0 + ag), alpha * beta)


def update_iq(iq: SpdOperator, stilde: SpdOperator, alpha: float, gamma: float) -> SpdOperator:
    """``(iq + a g stilde) / (1 + a g)``, a convex combination of SPD maps."""
    if alpha * gamma < 0:
        raise ValueError("alpha * gamma must be nonnegative")
    omega = 1.0 / (1.0 + alpha * gamma)
    return convex_combination(iq, stilde, omega)


# ---------------------------------------------------------------------------
# steps
# ---------------------------------------------------------------------------

def _inv(op: SpdOperator, x, k: int, what: str):
    try:
        y = op.inv_apply(x)
    except UnsupportedOperation:
        raise
    except (np.linalg.LinAlgError, ValueError, RuntimeError, ArithmeticError) as exc:
        raise SolverError(f"{what} inverse failed: {exc}", iteration=k) from exc
    if not np.all(np.isfinite(y)):
        raise SolverError(f"{what} inverse produced non-finite values", iteration=k)
    return y


def _dual_half(state, prob, alpha, gamma, iv, stilde):
    """Shared lines of both schemes: half step, I_Q update, dual update."""
    u, p, k = state.u, state.p, state.k
    u_half = u - _inv(iv, prob.f.grad(u) + prob.Bt(p), k, "I_V")
    updater = prob.iq_update or update_iq
    iq_next = updater(state.iq, stilde, alpha, gamma)
    p_next = p + alpha * _inv(iq_next, prob.B @ u_half - prob.b, k, "I_Q")
    if prob.project_dual is not None:
        p_next = prob.project_dual(p_next)
    return u_half, iq_next, p_next


def tpdv_step(state: PrimalDualState, prob: SaddleProblem, params: TpdvParams,
              iv: Optional[SpdOperator] = None,
              stilde: Optional[SpdOperator] = None) -> PrimalDualState:
    """One explicit step (also used for Uzawa mode, where ``alpha = 1``).

    ``iv`` and ``stilde`` may be passed in when already computed for this
    iterate; otherwise they come from the problem's factories.
    """
    if params.mode == "imex":
        raise ValueError("use tpdv_imex_step for mode='imex'")
    alpha = params.alpha
    if iv is None:
        iv = prob.iv_factory(state)
    if stilde is None:
        stilde = prob.stilde_factory(state, iv)
    u_half, iq_next, p_next = _dual_half(state, prob, alpha, params.gamma, iv, stilde)
    u_next = (1.0 - alpha) * state.u + alpha * u_half
    return PrimalDualState(u_next, p_next, iq_next, state.k + 1)


IMEX_RTOL = 1e-10


def tpdv_imex_step(state: PrimalDualState, prob: SaddleProblem, params: TpdvParams,
                   iv: Optional[SpdOperator] = None,
                   stilde: Optional[SpdOperator] = None) -> PrimalDualState:
    """One implicit-explicit step: explicit in ``p``, implicit in ``u``.

    The implicit primal update is delegated to ``prob.implicit_substep`` and
    then checked by back-substitution into
    ``I_V (u_{k+1} - u_k) + alpha (grad~ f(u_{k+1}) + B^T p_{k+1}) = 0``.
    """
    if prob.implicit_substep is None:
        raise UnsupportedOperation("IMEX step needs prob.implicit_substep")
    alpha = params.alpha
    if iv is None:
        iv = prob.iv_factory(state)
    if stilde is None:
        stilde = prob.stilde_factory(state, iv)
    _, iq_next, p_next = _dual_half(state, prob, alpha, params.gamma, iv, stilde)
    u_next = prob.implicit_substep(state.u, p_next, alpha, iv)

    if prob.implicit_gradient is None:
        g = prob.f.grad(u_next)
    else:
        g = prob.implicit_gradient(u_next, state.u)
    lhs = iv.apply(u_next - state.u)
    rhs = alpha * (g + prob.Bt(p_next))
    scale = max(np.max(np.abs(lhs)), np.max(np.abs(rhs)), np.max(np.abs(iv.apply(state.u))),
                np.finfo(float).tiny)
    rel = np.max(np.abs(lhs + rhs)) / scale
    if not rel <= IMEX_RTOL:
        raise ImplicitSolveError(f"implicit relation residual {rel:.3e} > {IMEX_RTOL}",
                                 iteration=state.k)
    return PrimalDualState(u_next, p_next, iq_next, state.k + 1)


# ---------------------------------------------------------------------------
# Lyapunov function
# ---------------------------------------------------------------------------

def lyapunov(state: PrimalDualState, ustar, pstar, f: GradientOracle) -> float:
    """``D_f(u, u*) + ||p - p*||^2_{I_Q} / 2``."""
    if f.eval is None:
        raise UnsupportedOperation("Lyapunov function needs f.eval")
    dp = np.asarray(state.p) - np.asarray(pstar)
    return bregman_divergence(f, state.u, ustar) + 0.5 * weighted_norm_sq(state.iq, dp)


# ---------------------------------------------------------------------------
# theoretical parameter selection
# ---------------------------------------------------------------------------

def _primal_bounds(prob: SaddleProblem, iv: SpdOperator):
    f = prob.f
    if f.hessian is not None and iv.materializable:
        eig = estimate_extreme_eigs(SpdOperator.from_matrix(f.hessian, factorize=False), iv)
        return eig.lambda_min, eig.lambda_max
    if f.lip_bound is None:
        raise UnsupportedOperation("theoretical mode needs f.lip_bound or f.hessian")
    return f.mu_bound, f.lip_bound


def _sampled_convexity(prob: SaddleProblem, iv: SpdOperator, u, rng, n_samples=8) -> float:
    """Smallest sampled ratio ``D_f(u, v) / (||u - v||^2_{I_V} / 2)``."""
    ratios = []
    scale = 1.0 + np.max(np.abs(u))
    for _ in range(n_samples):
        a = u + scale * rng.standard_normal(u.size)
        b = u + scale * rng.standard_normal(u.size)
        ratios.append(bregman_divergence(prob.f, a, b) / (0.5 * weighted_norm_sq(iv, a - b)))
    return min(ratios)


def select_theorem_params(state: PrimalDualState, prob: SaddleProblem, iv: SpdOperator,
                          stilde: SpdOperator, alpha_prev: Optional[float] = None,
                          max_rounds: int = 50, cache: Optional[dict] = None) -> TheoremParams:
    """Per-iteration parameters from dense eigenvalue bounds.

    The step-size bound depends on ``I_{Q,k+1}``, which itself depends on the
    step size.  The search starts from ``I_{Q,k+1}`` built with the previous
    step size and then shrinks ``alpha`` until it satisfies the bound computed
    with its own ``I_{Q,k+1}``.

    ``cache`` (a dict owned by the caller) keeps ``L_f``, ``S`` and ``mu_S``
    while the same ``iv`` and ``stilde`` objects are passed in.
    """
    cache = {} if cache is None else cache
    if cache.get("iv") is not iv or cache.get("stilde") is not stilde:
        _, L_f = _primal_bounds(prob, iv)
        S = prob.schur(iv)
        mu_s = float(generalized_eigvals(S, stilde.to_dense())[0])
        cache.update(iv=iv, stilde=stilde, L_f=L_f, S=S, mu_s=mu_s)
    L_f, S, mu_s = cache["L_f"], cache["S"], cache["mu_s"]
    beta = 1.0 / (2.0 * L_f)
    gamma = beta * mu_s
    updater = prob.iq_update or update_iq

    def bound(alpha):
        iq_next = updater(state.iq, stilde, alpha, gamma)
        L_s = float(generalized_eigvals(S, iq_next.to_dense())[-1])
        return compute_theorem_params(L_f, mu_s, L_s).alpha

    alpha = bound(alpha_prev if alpha_prev is not None else beta / (4.0 * L_f))
    for _ in range(max_rounds):
        limit = bound(alpha)
        if alpha <= limit:
            return TheoremParams(beta, gamma, alpha, theorem_rate(alpha, beta, gamma))
        alpha = limit
    while alpha > bound(alpha):
        alpha *= 0.5
    return TheoremParams(beta, gamma, alpha, theorem_rate(alpha, beta, gamma))


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------

@dataclass
class IterationRow:
    k: int
    residual_inf: float
    residual_u_inf: float
    residual_p_inf: float
    lyapunov: Optional[float] = None
    alpha: Optional[float] = None
    gamma: Optional[float] = None
    vcycles: int = 0
    beta: Optional[float] = None


@dataclass
class ConvergenceRecord:
    rows: List[IterationRow] = field(default_factory=list)
    status: str = "max_iter"
    tol: float = 1e-6
    state: Optional[PrimalDualState] = None
    seconds: float = 0.0
    label: str = ""
    dofs: int = 0

    @property
    def iterations(self) -> int:
        return self.rows[-1].k if self.rows else 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def total_vcycles(self) -> int:
        return sum(r.vcycles for r in self.rows)

    @property
    def final_residual(self) -> float:
        return self.rows[-1].residual_inf

    @property
    def relative_residual(self) -> float:
        r0 = self.rows[0].residual_inf
        return self.final_residual / r0 if r0 > 0 else 0.0

    def lyapunov_values(self) -> Optional[np.ndarray]:
        vals = [r.lyapunov for r in self.rows]
        if not vals or any(v is None for v in vals):
            return None
        return np.array(vals)

    def empirical_rate(self) -> Optional[float]:
        """``(E_K / E_0)^(1/K)`` when Lyapunov values were recorded."""
        E = self.lyapunov_values()
        if E is None or len(E) < 2 or E[0] <= 0:
            return None
        K = len(E) - 1
        if E[-1] <= 0:
            return 0.0
        return float((E[-1] / E[0]) ** (1.0 / K))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow([r.k, _fmt(r.residual_inf), _fmt(r.residual_u_inf), _fmt(r.residual_p_inf),
                        _fmt(r.lyapunov), _fmt(r.alpha), _fmt(r.gamma), r.vcycles])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "ConvergenceRecord":
        rows = []
        for rec in csv.DictReader(io.StringIO(text)):
            rows.append(IterationRow(
                int(rec["k"]), float(rec["residual_inf"]), float(rec["residual_u_inf"]),
                float(rec["residual_p_inf"]), _parse(rec["lyapunov"]), _parse(rec["alpha"]),
                _parse(rec["gamma"]), int(rec["vcycles"])))
        return cls(rows=rows)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _parse(s: str):
    return None if s == "" else float(s)


def default_state(prob: SaddleProblem, u0=None, p0=None) -> PrimalDualState:
    """``u0 = 0``, ``p0 = 0`` and ``I_Q0`` from ``iq0_factory`` (or ``S~_0``)."""
    u0 = np.zeros(prob.n_primal) if u0 is None else np.asarray(u0, dtype=float)
    p0 = np.zeros(prob.n_dual) if p0 is None else np.asarray(p0, dtype=float)
    probe = PrimalDualState(u0, p0, None, 0)
    iv0 = prob.iv_factory(probe)
    factory = prob.iq0_factory or prob.stilde_factory
    return PrimalDualState(u0, p0, factory(probe, iv0), 0)


def _spd_probe(state, prob, rng):
    x = rng.standard_normal(state.iq.dim)
    if prob.project_dual is not None:
        x = prob.project_dual(x)
    if not np.dot(state.iq.apply(x), x) > 0:
        raise SolverError("dual metric lost positive definiteness", iteration=state.k)


_ROUNDOFF = 1e3 * np.finfo(float).eps


def _data_scale(prob: SaddleProblem, state: PrimalDualState) -> float:
    """Magnitude of the terms entering the residual at the initial iterate."""
    parts = (prob.f.grad(state.u), prob.Bt(state.p), prob.B @ state.u, prob.b)
    return max(float(np.max(np.abs(x), initial=0.0)) for x in parts)


def solve(prob: SaddleProblem, params: TpdvParams, tol: float = 1e-6, max_iter: int = 1000,
          init: Optional[PrimalDualState] = None, reference=None,
          divergence_factor: float = 1e6, probe_every: int = 10, seed: int = 0,
          on_step: Optional[Callable] = None) -> ConvergenceRecord:
    """Iterate until ``||(grad f(u) + B^T p, B u - b)||_inf <= tol * initial``.

    Parameters
    ----------
    reference : tuple (ustar, pstar), optional
        Exact saddle point; enables the Lyapunov column.
    divergence_factor : float
        Stop with status ``diverged`` when the residual grows by this factor.
    probe_every : int
        Check positivity of the dual metric on a random probe every this many
        iterations (0 disables).
    on_step : callable, optional
        ``(state, iv, stilde, alpha, gamma)`` called after every step; used by
        diagnostics that need the operators of each iteration.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    t0 = time.perf_counter()
    state = default_state(prob) if init is None else init
    rng = np.random.default_rng(seed)
    step = tpdv_imex_step if params.mode == "imex" else tpdv_step
    theoretical = params.param_mode == "theoretical"

    def measure(st):
        ru, rp = prob.residuals(st.u, st.p)
        a, b = float(np.max(np.abs(ru), initial=0.0)), float(np.max(np.abs(rp), initial=0.0))
        return max(a, b), a, b

    def lyap(st):
        if reference is None or prob.f.eval is None:
            return None
        return lyapunov(st, reference[0], reference[1], prob.f)

    res0, ru0, rp0 = measure(state)
    rec = ConvergenceRecord(tol=tol, dofs=prob.n_primal + prob.n_dual)
    rec.rows.append(IterationRow(state.k, res0, ru0, rp0, lyap(state)))
    if res0 <= _ROUNDOFF * _data_scale(prob, state):
        rec.status, rec.state = "converged", state
        rec.seconds = time.perf_counter() - t0
        return rec

    alpha_prev = None
    theorem_cache: dict = {}
    warned = False
    status = "max_iter"
    for _ in range(max_iter):
        iv = prob.iv_factory(state)
        stilde = prob.stilde_factory(state, iv)
        alpha, gamma, beta = params.alpha, params.gamma, params.beta
        if theoretical:
            if not warned:
                mu = _primal_bounds(prob, iv)[0] if prob.f.hessian is not None else \
                    _sampled_convexity(prob, iv, state.u, rng)
                if mu is not None and mu < 1.0 - 1e-8:
                    warnings.warn(f"convexity relative to I_V is {mu:.4g} < 1; rescale I_V "
                                  "for the theoretical parameters to apply", RuntimeWarning)
                warned = True
            tp = select_theorem_params(state, prob, iv, stilde, alpha_prev, cache=theorem_cache)
            alpha, gamma, beta = tp.alpha, tp.gamma, tp.beta
            alpha_prev = alpha
        step_params = replace(params, alpha=alpha, gamma=gamma, beta=beta)
        state = step(state, prob, step_params, iv=iv, stilde=stilde)
        if on_step is not None:
            on_step(state, iv, stilde, alpha, gamma)
        res, ru, rp = measure(state)
        rec.rows.append(IterationRow(state.k, res, ru, rp, lyap(state), alpha, gamma,
                                     state.iq.inv_cost, beta))
        if probe_every and state.k % probe_every == 0:
            _spd_probe(state, prob, rng)
        if res <= tol * res0:
            status = "converged"
            break
        if not math.isfinite(res) or res >= divergence_factor * res0:
            status = "diverged"
            break
    rec.status, rec.state = status, state
    rec.seconds = time.perf_counter() - t0
    return rec


# ---------------------------------------------------------------------------
# inexact dual preconditioner: spectral sandwich
# ---------------------------------------------------------------------------

@dataclass
class SandwichEntry:
    k: int
    radius_k: float           # rho(I - I_Q^{-1} I_Q*) at k
    radius_k1: float          # same at k + 1
    hyp2_min_eig: float       # min eig of S/2 - 2 delta w/(1-w) I_Q*
    hypotheses_met: bool
    eig_min: float            # extremes of the pencil (S~, S)
    eig_max: float
    conclusion_holds: bool

    @property
    def violation(self) -> bool:
        return self.hypotheses_met and not self.conclusion_holds

    @property
    def verdict(self) -> str:
        if not self.hypotheses_met:
            return "hypotheses not met"
        return "ok" if self.conclusion_holds else "violation"


@dataclass
class SandwichReport:
    delta: float
    entries: List[SandwichEntry]

    @property
    def violations(self) -> List[SandwichEntry]:
        return [e for e in self.entries if e.violation]

    @property
    def all_hypotheses_met(self) -> bool:
        return all(e.hypotheses_met for e in self.entries)


def _mat(op):
    if isinstance(op, SpdOperator):
        if not op.materializable:
            raise UnsupportedOperation("sandwich verification needs materializable operators")
        return op.to_dense()
    return op.toarray() if sp.issparse(op) else np.asarray(op, dtype=float)


def spectral_defect(iq, iqstar) -> float:
    """``rho(I - iq^{-1} iqstar)``."""
    lam = generalized_eigvals(_mat(iqstar), _mat(iq))
    return float(np.max(np.abs(1.0 - lam)))


def verify_sandwich(iqstar_seq, iq_seq, stilde_seq, s_seq, omega_seq, delta: float,
                    atol: float = 1e-12) -> SandwichReport:
    """Check the spectral equivalence of ``S~_k`` and ``S_k`` induced by an
    inexact dual preconditioner.

    ``iqstar_seq`` and ``iq_seq`` hold ``K + 1`` operators (index ``k + 1`` is
    needed for step ``k``); the other sequences hold ``K``.  For each step the
    report gives the two hypotheses (``rho(I - I_Q^{-1} I_Q*) <= delta/(1+delta)``
    at ``k`` and ``k + 1``; ``2 delta w/(1-w) I_Q* <= S/2``) and the extreme
    eigenvalues of ``S_k^{-1} S~_k``.  A violation is flagged only when the
    hypotheses hold but the eigenvalues leave ``[1/2 - delta, 3/2 + delta]``.
    """
    K = len(stilde_seq)
    if not (len(s_seq) == len(omega_seq) == K and len(iq_seq) == len(iqstar_seq) == K + 1):
        raise DimensionError("sequence lengths do not align")
    if not 0 < delta < 1:
        raise ContractNotApplicable("delta must lie in (0, 1)")
    lim = delta / (1.0 + delta)
    entries = []
    radii = [spectral_defect(iq, iqs) for iq, iqs in zip(iq_seq, iqstar_seq)]
    for k in range(K):
        w = float(omega_seq[k])
        S = _mat(s_seq[k])
        Qs = _mat(iqstar_seq[k])
        H = 0.5 * S - 2.0 * delta * w / (1.0 - w) * Qs
        h2 = float(np.linalg.eigvalsh(0.5 * (H + H.T))[0])
        scale = max(np.abs(S).max(), 1.0)
        met = radii[k] <= lim + atol and radii[k + 1] <= lim + atol and h2 >= -atol * scale
        lam = generalized_eigvals(_mat(stilde_seq[k]), S)
        lo, hi = float(lam[0]), float(lam[-1])
        holds = lo >= 0.5 - delta - 1e-10 and hi <= 1.5 + delta + 1e-10
        entries.append(SandwichEntry(k, radii[k], radii[k + 1], h2, met, lo, hi, holds))
    return SandwichReport(delta, entries)
