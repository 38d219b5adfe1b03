"""Linear-algebra substrate: SPD operators, weighted norms, Bregman
divergences and extreme generalized eigenvalues.

Sparse matrices are plain :class:`scipy.sparse.csr_matrix` objects kept in
canonical form (sorted column indices, no duplicates, no stored zeros); see
:func:`canonical_csr`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import (
    ContractNotApplicable,
    DimensionError,
    EigenvalueConvergenceError,
    UnsupportedOperation,
)

# dimension above which the iterative eigenvalue path is used by default
DENSE_EIG_LIMIT = 2000


# ---------------------------------------------------------------------------
# sparse matrices
# ---------------------------------------------------------------------------

def canonical_csr(A) -> sp.csr_matrix:
    """Return ``A`` as CSR with sorted, deduplicated columns and no zeros."""
    A = sp.csr_matrix(A, copy=True)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    A.has_canonical_format = True
    return A


def transpose(A) -> sp.csr_matrix:
    return canonical_csr(sp.csr_matrix(A).T)


def write_mtx(path, A, comment: str = "") -> None:
    """Write a sparse matrix in Matrix Market coordinate format."""
    scipy.io.mmwrite(str(path), sp.coo_matrix(canonical_csr(A)),
                     comment=comment, field="real", precision=17)


def read_mtx(path) -> sp.csr_matrix:
    return canonical_csr(scipy.io.mmread(str(path)))


# ---------------------------------------------------------------------------
# SPD operators
# ---------------------------------------------------------------------------

class SpdOperator:
    """Symmetric positive definite linear map given by its actions.

    Parameters
    ----------
    dim : int
        Dimension of the (square) operator.
    apply : callable
        ``x -> M x``.
    inv_apply : callable, optional
        ``x -> M^{-1} x``; may be approximate (e.g. multigrid cycles).
    materialize : callable, optional
        Returns the matrix of ``M`` (dense array or sparse matrix).
    inv_cost : int
        Work units (V-cycles) spent per ``inv_apply`` call, for bookkeeping.
    """

    def __init__(self, dim: int, apply: Callable, inv_apply: Optional[Callable] = None,
                 materialize: Optional[Callable] = None, inv_cost: int = 0):
        self.dim = int(dim)
        self._apply = apply
        self._inv_apply = inv_apply
        self._materialize = materialize
        self.inv_cost = inv_cost

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim})"

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise DimensionError(f"operator has dim {self.dim}, vector has {x.shape[0]}")
        return x

    def apply(self, x):
        return self._apply(self._check(x))

    def inv_apply(self, x):
        if self._inv_apply is None:
            raise UnsupportedOperation(f"{self!r} has no inverse action")
        return self._inv_apply(self._check(x))

    @property
    def has_inverse(self) -> bool:
        return self._inv_apply is not None

    @property
    def materializable(self) -> bool:
        return self._materialize is not None

    def materialize(self):
        if self._materialize is None:
            raise UnsupportedOperation(f"{self!r} cannot be materialized")
        return self._materialize()

    def to_dense(self) -> np.ndarray:
        M = self.materialize()
        return M.toarray() if sp.issparse(M) else np.array(M, dtype=float)

    def scaled(self, c: float) -> "SpdOperator":
        """The operator ``c * M`` for ``c > 0``."""
        if c <= 0:
            raise ValueError("scale must be positive")
        inv = None if self._inv_apply is None else (lambda x: self._inv_apply(x) / c)
        mat = None if self._materialize is None else (lambda: c * self._materialize())
        return SpdOperator(self.dim, lambda x: c * self._apply(x), inv, mat, self.inv_cost)

    # constructors ---------------------------------------------------------

    @classmethod
    def from_matrix(cls, M, factorize: bool = True) -> "SpdOperator":
        """Wrap a dense or sparse SPD matrix.

        Dense matrices are Cholesky-factorized up front; sparse ones get a
        sparse LU on first inverse use.
        """
        if sp.issparse(M):
            M = canonical_csr(M)
            n = M.shape[0]
            if M.shape != (n, n):
                raise DimensionError("matrix must be square")
            solver = {}

            def inv(x):
                if "lu" not in solver:
                    solver["lu"] = spla.factorized(sp.csc_matrix(M))
                return solver["lu"](x)

            return cls(n, M.dot, inv if factorize else None, lambda: M)
        M = np.array(M, dtype=float)
        n = M.shape[0]
        if M.ndim != 2 or M.shape != (n, n):
            raise DimensionError("matrix must be square")
        inv = None
        if factorize:
            cf = sla.cho_factor(M)
            inv = lambda x: sla.cho_solve(cf, x)  # noqa: E731
        return cls(n, M.dot, inv, lambda: M)

    @classmethod
    def identity(cls, n: int) -> "SpdOperator":
        return cls(n, lambda x: x.copy(), lambda x: x.copy(), lambda: sp.identity(n, format="csr"))

    @classmethod
    def diagonal(cls, d) -> "SpdOperator":
        d = np.asarray(d, dtype=float)
        if np.any(d <= 0):
            raise ValueError("diagonal entries must be positive")
        return cls(d.size, lambda x: d * x if x.ndim == 1 else d[:, None] * x,
                   lambda x: x / d if x.ndim == 1 else x / d[:, None],
                   lambda: sp.diags(d, format="csr"))


def as_operator(M) -> SpdOperator:
    return M if isinstance(M, SpdOperator) else SpdOperator.from_matrix(M)


def convex_combination(a: SpdOperator, b: SpdOperator, w: float) -> SpdOperator:
    """``w * a + (1 - w) * b`` for ``w`` in [0, 1].

    The inverse action is available when both operands are materializable.
    """
    if a.dim != b.dim:
        raise DimensionError("operators differ in dimension")
    if w == 1.0:
        return a
    if w == 0.0:
        return b

    def apply(x):
        return w * a.apply(x) + (1.0 - w) * b.apply(x)

    if a.materializable and b.materializable:
        Ma, Mb = a.materialize(), b.materialize()
        if sp.issparse(Ma) or sp.issparse(Mb):
            if sp.issparse(Ma) and sp.issparse(Mb):
                M = canonical_csr(w * Ma + (1.0 - w) * Mb)
            else:
                M = w * _dense(Ma) + (1.0 - w) * _dense(Mb)
        else:
            M = w * Ma + (1.0 - w) * Mb
        return SpdOperator.from_matrix(M)
    return SpdOperator(a.dim, apply)


def _dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def weighted_inner(M, x, y) -> float:
    """``<M x, y>``."""
    M = as_operator(M)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.shape[0] != M.dim:
        raise DimensionError(f"shapes {x.shape}, {y.shape} incompatible with dim {M.dim}")
    return float(np.dot(M.apply(x), y))


def weighted_norm_sq(M, x) -> float:
    return weighted_inner(M, x, x)


def inv_weighted_norm_sq(M: SpdOperator, x) -> float:
    """``||x||^2_{M^{-1}} = <M^{-1} x, x>``."""
    x = np.asarray(x, dtype=float)
    return float(np.dot(M.inv_apply(x), x))


# ---------------------------------------------------------------------------
# smooth convex functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradientOracle:
    """First-order oracle for a convex function ``f``.

    ``mu_bound`` / ``lip_bound`` are convexity and Lipschitz constants of
    ``f`` relative to ``reference_metric``.  ``hessian`` is set for quadratic
    functions and enables exact bound computation under other metrics.
    """

    dim: int
    grad: Callable
    eval: Optional[Callable] = None
    mu_bound: Optional[float] = None
    lip_bound: Optional[float] = None
    reference_metric: Optional[SpdOperator] = None
    hessian: Optional[np.ndarray] = field(default=None, repr=False)
    conj_grad: Optional[Callable] = None

    def __post_init__(self):
        if self.mu_bound is not None and self.lip_bound is not None:
            if not 0 < self.mu_bound <= self.lip_bound:
                raise ValueError("need 0 < mu_bound <= lip_bound")

    def with_metric(self, M) -> "GradientOracle":
        """Recompute the bounds relative to metric ``M`` (quadratics only)."""
        if self.hessian is None:
            raise UnsupportedOperation("bounds under a new metric need the Hessian")
        M = as_operator(M)
        eig = estimate_extreme_eigs(SpdOperator.from_matrix(self.hessian, factorize=False), M)
        return GradientOracle(self.dim, self.grad, self.eval, eig.lambda_min, eig.lambda_max,
                              M, self.hessian, self.conj_grad)


def quadratic_oracle(A, c=None, metric=None) -> GradientOracle:
    """Oracle for ``f(x) = x^T A x / 2 - c^T x`` with SPD ``A``.

    Bounds are computed exactly against ``metric`` (identity by default).
    """
    A = np.array(_dense(A), dtype=float)
    n = A.shape[0]
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float)
    cf = sla.cho_factor(A)

    def f(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * x @ A @ x - c @ x

    def grad(x):
        return A @ np.asarray(x, dtype=float) - c

    def conj_grad(xi):
        return sla.cho_solve(cf, np.asarray(xi, dtype=float) + c)

    oracle = GradientOracle(n, grad, f, hessian=A, conj_grad=conj_grad)
    return oracle.with_metric(SpdOperator.identity(n) if metric is None else metric)


def check_gradient(f: GradientOracle, x) -> float:
    """Largest relative deviation between ``f.grad`` and central differences.

    Step ``h = 1e-5 (1 + ||x||_inf)``.
    """
    if f.eval is None:
        raise UnsupportedOperation("finite-difference check needs f.eval")
    x = np.asarray(x, dtype=float)
    h = 1e-5 * (1.0 + np.max(np.abs(x)))
    g = f.grad(x)
    fd = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        fd[i] = (f.eval(x + e) - f.eval(x - e)) / (2 * h)
    return float(np.max(np.abs(fd - g)) / max(np.max(np.abs(g)), 1e-300))


def bregman_divergence(f: GradientOracle, u, v) -> float:
    """``f(u) - f(v) - <grad f(v), u - v>``.

    For quadratics (``f.hessian`` set) this is ``||u - v||^2_H / 2``, which is
    evaluated directly; the generic formula loses all accuracy to
    cancellation once the divergence is below round-off of ``f`` itself.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise DimensionError("u and v differ in shape")
    if f.hessian is not None:
        d = u - v
        return 0.5 * float(d @ (f.hessian @ d))
    if f.eval is None:
        raise UnsupportedOperation("Bregman divergence needs f.eval")
    return float(f.eval(u) - f.eval(v) - np.dot(f.grad(v), u - v))


def e_map(M, conj_grad: Callable, xi):
    """``xi - M grad f*(xi)``: one metric gradient step on the conjugate."""
    M = as_operator(M)
    xi = np.asarray(xi, dtype=float)
    return xi - M.apply(conj_grad(xi))


def contraction_bound(mu: float, L: float) -> float:
    """``1 - (2 mu - 1) / (mu L)``, the contraction constant of the e-map."""
    return 1.0 - (2.0 * mu - 1.0) / (mu * L)


def contraction_defect(f: GradientOracle, M, u1, u2, check_hypothesis: bool = True):
    """Both sides of the metric-gradient contraction inequality.

    Returns ``(lhs, rhs_factor)`` with
    ``lhs = ||grad f(u1) - grad f(u2) - M (u1 - u2)||^2_{M^{-1}}`` and
    ``rhs_factor = ||grad f(u1) - grad f(u2)||^2_{M^{-1}}``.  When
    ``mu_{f,M} > 1/2`` the caller may assert
    ``lhs <= contraction_bound(mu, L) * rhs_factor``.
    """
    M = as_operator(M)
    if check_hypothesis:
        if f.mu_bound is None or f.lip_bound is None:
            raise ContractNotApplicable("contraction bound needs mu_bound and lip_bound")
        if f.mu_bound <= 0.5:
            raise ContractNotApplicable(f"mu_bound = {f.mu_bound} <= 1/2: no contraction")
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    dg = f.grad(u1) - f.grad(u2)
    w = dg - M.apply(u1 - u2)
    return inv_weighted_norm_sq(M, w), inv_weighted_norm_sq(M, dg)


# ---------------------------------------------------------------------------
# extreme eigenvalues of D^{-1} A
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EigPair:
    lambda_min: float
    lambda_max: float

    def __post_init__(self):
        if not (np.isfinite(self.lambda_min) and np.isfinite(self.lambda_max)):
            raise ValueError("eigenvalue estimates must be finite")
        if self.lambda_min > self.lambda_max:
            raise ValueError("lambda_min > lambda_max")

    @property
    def condition(self) -> float:
        return self.lambda_max / self.lambda_min


def generalized_eigvals(A, D) -> np.ndarray:
    """All eigenvalues of ``D^{-1} A`` for dense symmetric ``A``, SPD ``D``."""
    return sla.eigh(_dense(A), _dense(D), eigvals_only=True)


def estimate_extreme_eigs(A, D, mode: str = "auto", tol: float = 1e-3,
                          max_iter: int = 500, seed: int = 0) -> EigPair:
    """Smallest and largest eigenvalue of the pencil ``D^{-1} A``.

    ``mode='dense'`` uses a generalized symmetric eigensolve; ``'iterative'``
    runs power iteration in the ``D`` inner product for the top of the
    spectrum and inverse iteration (or shifted power iteration when ``A``
    has no inverse action) for the bottom.  ``'auto'`` picks dense up to
    ``DENSE_EIG_LIMIT`` when both operators materialize.
    """
    A = as_operator(A)
    D = as_operator(D)
    if A.dim != D.dim:
        raise DimensionError("A and D differ in dimension")
    if mode == "auto":
        dense_ok = A.materializable and D.materializable and A.dim <= DENSE_EIG_LIMIT
        mode = "dense" if dense_ok else "iterative"
    if mode == "dense":
        lam = generalized_eigvals(A.materialize(), D.materialize())
        return EigPair(float(lam[0]), float(lam[-1]))
    if mode != "iterative":
        raise ValueError(f"unknown mode {mode!r}")
    return _iterative_eigs(A, D, tol, max_iter, seed)


def _rayleigh(A, D, x):
    return float(np.dot(A.apply(x), x) / np.dot(D.apply(x), x))


def _power(step, A, D, x, tol, max_iter):
    lam = _rayleigh(A, D, x)
    for _ in range(max_iter):
        x = step(x)
        x /= np.sqrt(np.dot(D.apply(x), x))
        new = _rayleigh(A, D, x)
        if abs(new - lam) <= tol * abs(new):
            return new, True
        lam = new
    return lam, False


def _iterative_eigs(A: SpdOperator, D: SpdOperator, tol, max_iter, seed) -> EigPair:
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(A.dim)
    lmax, ok_max = _power(lambda x: D.inv_apply(A.apply(x)), A, D, x0.copy(), tol, max_iter)
    if A.has_inverse:
        step = lambda x: A.inv_apply(D.apply(x))  # noqa: E731
    else:
        shift = 1.05 * lmax
        step = lambda x: shift * x - D.inv_apply(A.apply(x))  # noqa: E731
    lmin, ok_min = _power(step, A, D, x0.copy(), tol, max_iter)
    if not (ok_max and ok_min):
        raise EigenvalueConvergenceError(
            f"power iteration did not reach rtol {tol} in {max_iter} steps",
            lambda_min=lmin, lambda_max=lmax)
    return EigPair(min(lmin, lmax), max(lmin, lmax))
