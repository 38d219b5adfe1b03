"""Synthetic equality-constrained quadratic programs with exact saddle points.

Random data comes from ``numpy.random.default_rng(seed)`` (PCG64) and is
drawn in a fixed order (orthogonal factor, eigenvalue scale, ``B``, ``c``,
feasible point), so a seed pins the instance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .numerics import SpdOperator, quadratic_oracle
from .solver import SaddleProblem

SCALE_MODES = ("raw", "unit_mu")
METRICS = ("identity", "jacobi")
KKT_TOL = 1e-11
_MAX_ATTEMPTS = 10


@dataclass(frozen=True)
class QuadraticSaddleSpec:
    """Shape and conditioning of a random quadratic saddle problem.

    ``scale_mode='unit_mu'`` rescales the primal metric so that the convexity
    constant of ``f`` relative to it is exactly one.
    """

    n: int = 20
    m: int = 5
    cond_a: float = 10.0
    seed: int = 0
    scale_mode: str = "unit_mu"
    metric: str = "jacobi"

    def __post_init__(self):
        if not (1 <= self.m < self.n):
            raise ValueError("need 1 <= m < n")
        if self.cond_a < 1:
            raise ValueError("cond_a must be >= 1")
        if self.scale_mode not in SCALE_MODES:
            raise ValueError(f"scale_mode must be one of {SCALE_MODES}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")


class QuadraticSaddle(NamedTuple):
    problem: SaddleProblem
    ustar: np.ndarray
    pstar: np.ndarray


def kkt_solve(A, B, c, b):
    """Solve ``[A B^T; B 0] [u; p] = [c; b]`` densely."""
    n, m = A.shape[0], B.shape[0]
    K = np.block([[A, B.T], [B, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([c, b]))
    return sol[:n], sol[n:]


def quadratic_saddle_from_matrices(A, B, c=None, b=None, iv: Optional[SpdOperator] = None,
                                   stilde: Optional[SpdOperator] = None) -> QuadraticSaddle:
    """Saddle problem for ``f(u) = u^T A u / 2 - c^T u`` subject to ``B u = b``.

    The primal metric defaults to the identity and the Schur approximation to
    the exact ``B I_V^{-1} B^T``.
    """
    A = np.asarray(A, dtype=float)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = A.shape[0], B.shape[0]
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
    b = np.zeros(m) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    iv = SpdOperator.identity(n) if iv is None else iv
    f = quadratic_oracle(A, c, metric=iv)
    if stilde is None:
        S = B @ iv.inv_apply(B.T)
        stilde = SpdOperator.from_matrix(0.5 * (S + S.T))

    def implicit_substep(u_k, p_next, alpha, iv_k):
        M = iv_k.to_dense()
        return np.linalg.solve(M + alpha * A, M @ u_k + alpha * (c - B.T @ p_next))

    prob = SaddleProblem(f, B, b, iv_factory=lambda state: iv,
                         stilde_factory=lambda state, iv_k: stilde,
                         implicit_substep=implicit_substep)
    ustar, pstar = kkt_solve(A, B, c, b)
    ru, rp = prob.residuals(ustar, pstar)
    scale = 1.0 + np.abs(A).max() * np.abs(ustar).max() + np.abs(c).max()
    if max(np.abs(ru).max(), np.abs(rp).max()) > KKT_TOL * scale:
        raise RuntimeError("KKT solve inaccurate")
    return QuadraticSaddle(prob, ustar, pstar)


def random_spd(rng, n: int, cond: float):
    """SPD matrix with eigenvalues log-spaced over ``[s, s*cond]``, random ``s``."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    s = np.exp(rng.uniform(-1.0, 1.0))
    lam = s * cond ** np.linspace(0.0, 1.0, n)
    A = (Q * lam) @ Q.T
    return 0.5 * (A + A.T)


def make_quadratic_saddle(spec: QuadraticSaddleSpec) -> QuadraticSaddle:
    """Seeded random instance with exact saddle point from a dense KKT solve.

    A rank-deficient ``B`` triggers regeneration with the next seed, at most
    ten attempts.
    """
    for attempt in range(_MAX_ATTEMPTS):
        rng = np.random.default_rng(spec.seed + attempt)
        A = random_spd(rng, spec.n, spec.cond_a)
        B = rng.standard_normal((spec.m, spec.n))
        c = rng.standard_normal(spec.n)
        u_feas = rng.standard_normal(spec.n)
        if np.linalg.matrix_rank(B) == spec.m:
            break
    else:
        raise RuntimeError(f"no full-rank B after {_MAX_ATTEMPTS} seeds")
    b = B @ u_feas
    d = np.diag(A).copy() if spec.metric == "jacobi" else np.ones(spec.n)
    if spec.scale_mode == "unit_mu":
        # smallest eigenvalue of diag(d)^{-1} A
        r = 1.0 / np.sqrt(d)
        d = d * np.linalg.eigvalsh((A * r[:, None]) * r[None, :])[0]
    iv = SpdOperator.diagonal(d)
    return quadratic_saddle_from_matrices(A, B, c, b, iv=iv)
