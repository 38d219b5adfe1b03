"""Geometric multigrid for P1 Neumann Laplacians with variable coefficients.

V-cycles use damped Jacobi smoothing (damping 0.8, four sweeps before and
after the coarse correction).  Prolongations come from the nested structured meshes; coarse operators are
Galerkin products.  The constant nullspace is handled by projecting onto the
sum-zero subspace after every transfer and by a rank-one regularized direct
solve on the coarsest level.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem2d import Mesh, build_structured_mesh, refine
from .numerics import SpdOperator, canonical_csr

JACOBI_DAMPING = 0.8
PRE_SMOOTH = 4
POST_SMOOTH = 4
COARSEST_N = 4


def project_constants(x) -> np.ndarray:
    """Remove the mean: Euclidean projection onto the sum-zero subspace."""
    x = np.asarray(x, dtype=float)
    return x - x.mean()


@dataclass
class MgLevel:
    matrix: sp.csr_matrix
    prolongation: Optional[sp.csr_matrix]   # from the next coarser level to this one
    smoother_diag: np.ndarray


@dataclass
class MgHierarchy:
    levels: List[MgLevel]                   # finest first
    coarse_factor: tuple
    nullspace_mode: str = "project_constants"

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def dim(self) -> int:
        return self.levels[0].matrix.shape[0]

    def with_matrix(self, matrix) -> "MgHierarchy":
        """Same prolongations, new fine operator."""
        prolongations = [lv.prolongation for lv in self.levels]
        return _galerkin(canonical_csr(matrix), prolongations)


def prolongation(coarse_n: int) -> sp.csr_matrix:
    """P1 interpolation from the ``coarse_n`` mesh to its red refinement."""
    fine = refine(build_structured_mesh(coarse_n))
    par = fine.parents
    nf = fine.n_nodes
    rows = np.repeat(np.arange(nf), 2)
    P = sp.coo_matrix((np.full(2 * nf, 0.5), (rows, par.ravel())),
                      shape=(nf, (coarse_n + 1) ** 2))
    return canonical_csr(P)


def default_levels(n: int, coarsest: int = COARSEST_N) -> int:
    levels = 1
    while n % 2 == 0 and n // 2 >= coarsest:
        n //= 2
        levels += 1
    return levels


def build_hierarchy(fine_mesh: Mesh, coarse_levels: Optional[int], matrix) -> MgHierarchy:
    """Hierarchy with ``coarse_levels`` levels in total (finest included).

    ``None`` coarsens down to ``COARSEST_N`` subdivisions.
    """
    n = fine_mesh.n
    levels = default_levels(n) if coarse_levels is None else int(coarse_levels)
    if levels < 1:
        raise ValueError("need at least one level")
    if n % (2 ** (levels - 1)) != 0:
        raise ValueError(f"mesh with n={n} cannot be coarsened {levels - 1} times")
    A = canonical_csr(matrix)
    if A.shape != (fine_mesh.n_nodes, fine_mesh.n_nodes):
        raise ValueError("matrix does not match the mesh")
    prolongations = [None] * levels
    for i in range(levels - 1):
        prolongations[i] = prolongation(n // 2 ** (i + 1))
    return _galerkin(A, prolongations)


def _galerkin(A, prolongations) -> MgHierarchy:
    levels = []
    for i, P in enumerate(prolongations):
        levels.append(MgLevel(A, P, A.diagonal().copy()))
        if P is not None:
            A = canonical_csr(P.T @ (A @ P))
            A = canonical_csr(0.5 * (A + A.T))
    Ac = levels[-1].matrix.toarray()
    n = Ac.shape[0]
    shift = max(float(np.mean(np.diag(Ac))), np.finfo(float).tiny) / n
    factor = sla.cho_factor(Ac + shift * np.ones((n, n)))
    return MgHierarchy(levels, factor)


def _coarse_solve(h: MgHierarchy, r):
    return project_constants(sla.cho_solve(h.coarse_factor, project_constants(r)))


def _smooth(A, d, x, r, sweeps):
    for _ in range(sweeps):
        x = x + JACOBI_DAMPING * (r - A @ x) / d
    return x


def _cycle(h: MgHierarchy, i: int, r, x, pre: int, post: int):
    if i == h.n_levels - 1:
        return _coarse_solve(h, r)
    lv = h.levels[i]
    A, d, P = lv.matrix, lv.smoother_diag, lv.prolongation
    x = _smooth(A, d, x, r, pre)
    rc = project_constants(P.T @ (r - A @ x))
    ec = _cycle(h, i + 1, rc, np.zeros(rc.size), pre, post)
    x = project_constants(x + P @ ec)
    x = _smooth(A, d, x, r, post)
    return project_constants(x)


def vcycle(h: MgHierarchy, rhs, x0=None, pre_smooth: int = PRE_SMOOTH,
           post_smooth: int = POST_SMOOTH) -> np.ndarray:
    """One V-cycle for ``A x = rhs`` on the sum-zero subspace."""
    r = project_constants(rhs)
    x = np.zeros(h.dim) if x0 is None else project_constants(x0)
    return _cycle(h, 0, r, x, pre_smooth, post_smooth)


def mg_solve(h: MgHierarchy, rhs, m: int, pre_smooth: int = PRE_SMOOTH,
             post_smooth: int = POST_SMOOTH):
    """``m`` V-cycles from a zero initial guess."""
    x = np.zeros(h.dim)
    r = project_constants(rhs)
    for _ in range(m):
        x = vcycle(h, r, x, pre_smooth, post_smooth)
    return x


def mg_inverse(h: MgHierarchy, m: int = 1, pre_smooth: int = PRE_SMOOTH,
               post_smooth: int = POST_SMOOTH) -> SpdOperator:
    """SPD operator whose inverse action is ``m`` V-cycles.

    ``apply`` and ``materialize`` return the fine-level matrix itself; the
    inverse is the (linear, symmetric) multigrid approximation on the
    sum-zero subspace.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    A = h.levels[0].matrix

    def inv(x):
        if x.ndim == 2:
            return np.column_stack([mg_solve(h, c, m, pre_smooth, post_smooth) for c in x.T])
        return mg_solve(h, x, m, pre_smooth, post_smooth)

    op = SpdOperator(h.dim, A.dot, inv, lambda: A, inv_cost=m)
    op.hierarchy = h
    return op


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def projected_direct_solve(A, rhs) -> np.ndarray:
    """Exact sum-zero solution of ``A x = rhs`` for a Neumann operator.

    The first unknown is pinned to zero, the reduced system solved by sparse
    LU, and the result projected.
    """
    A = sp.csr_matrix(A)
    r = project_constants(rhs)
    Ar = sp.csc_matrix(A[1:, 1:])
    x = np.zeros(A.shape[0])
    x[1:] = spla.spsolve(Ar, r[1:])
    return project_constants(x)


def contraction_factor(h: MgHierarchy, n_cycles: int = 16, seed: int = 0,
                       pre_smooth: int = PRE_SMOOTH, post_smooth: int = POST_SMOOTH) -> float:
    """Asymptotic energy-norm error reduction per V-cycle.

    A random sum-zero right-hand side is solved directly.  V-cycles start
    from a random guess; after each cycle the error against the direct
    solution is rescaled to unit energy norm (a power iteration on the error
    propagator, which keeps the measurement above round-off).  The factor is
    the geometric mean of the reductions over the second half of the cycles.
    """
    rng = np.random.default_rng(seed)
    A = h.levels[0].matrix
    b = project_constants(rng.standard_normal(h.dim))
    xs = projected_direct_solve(A, b)

    def enorm(e):
        return float(np.sqrt(max(e @ (A @ e), 0.0)))

    e = project_constants(rng.standard_normal(h.dim))
    e /= enorm(e)
    ratios = []
    for _ in range(n_cycles):
        e = vcycle(h, b, xs + e, pre_smooth, post_smooth) - xs
        r = enorm(e)
        ratios.append(r)
        if r == 0.0:
            return 0.0
        e /= r
    tail = ratios[n_cycles // 2:]
    return float(np.exp(np.mean(np.log(tail))))


def level_residuals(h: MgHierarchy, rhs, x) -> List[float]:
    """Max-norm residuals restricted to every level (diagnostic dump)."""
    out = []
    r = project_constants(rhs) - h.levels[0].matrix @ x
    for i, lv in enumerate(h.levels):
        out.append(float(np.max(np.abs(r))))
        if lv.prolongation is not None:
            r = project_constants(lv.prolongation.T @ r)
    return out


class MgDualUpdate:
    """Interpolated dual preconditioner realized by multigrid.

    Called as ``(iq, stilde, alpha, gamma) -> SpdOperator``: forms
    ``I*' = w I* + (1 - w) S~`` as a sparse matrix (``w = 1/(1 + alpha gamma)``)
    and returns ``mg_inverse`` of a Galerkin hierarchy for it.
    """

    def __init__(self, mesh: Mesh, m: int = 1, levels: Optional[int] = None):
        self.mesh = mesh
        self.m = m
        self.levels = levels
        self._template = None

    def operator(self, matrix) -> SpdOperator:
        if self._template is None:
            self._template = build_hierarchy(self.mesh, self.levels, matrix)
            return mg_inverse(self._template, self.m)
        return mg_inverse(self._template.with_matrix(matrix), self.m)

    def __call__(self, iq, stilde, alpha, gamma):
        w = 1.0 / (1.0 + alpha * gamma)
        M = canonical_csr(w * iq.materialize() + (1.0 - w) * stilde.materialize())
        return self.operator(M)
