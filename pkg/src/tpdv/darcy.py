"""Darcy-Forchheimer flow on (-1,1)^2 with lowest-order mixed elements.

The model is ``sigma(u) u + grad p = f``, ``div u = g`` with ``u.n = g_N`` on
the boundary, where ``sigma(u) = (mu K^{-1} + beta |u|) / rho``.  The velocity
solves the constrained minimization of

    F(u) = sum_T |T| ( mu/(2 rho) u_T.K_T^{-1} u_T + beta/(3 rho) |u_T|^3 ) - fu.u

subject to ``B u = gp``, with the pressure as multiplier.  The primal metric
is ``I_V = M0^{sigma_k}`` and the dual metric is realized by multigrid on
interpolated variable-coefficient Laplacians.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .exceptions import UnsupportedOperation
from .fem2d import (
    FemOperators,
    Mesh,
    apply_zero_mean,
    assemble_operators,
    assemble_rhs,
    assemble_variable_laplacian,
    build_structured_mesh,
)
from .multigrid import MgDualUpdate, project_constants
from .numerics import GradientOracle, SpdOperator
from .solver import ConvergenceRecord, PrimalDualState, SaddleProblem, TpdvParams, solve

VARIANTS = ("tpdv", "tpdv_imex", "uzawa")
BENCH_HEADER = ("h", "dofs", "iterations", "vcycles", "seconds", "status")

# parameters used for each benchmark variant unless overridden
DEFAULT_PARAMS = {
    "tpdv": TpdvParams(alpha=0.7, gamma=1.4),
    "tpdv_imex": TpdvParams(alpha=1.5, gamma=0.9, mode="imex"),
    "uzawa": TpdvParams(alpha=1.0, gamma=1.4, mode="uzawa"),
}


@dataclass(frozen=True)
class DarcyCoeffs:
    """``mu``, ``rho > 0``, Forchheimer number ``beta_f >= 0`` and permeability.

    ``k_perm`` is a positive scalar, a 2x2 SPD matrix, or a callable
    ``points (N,2) -> (N,)`` (scalar field) or ``(N,2,2)``.
    """

    mu: float = 1.0
    rho: float = 1.0
    beta_f: float = 30.0
    k_perm: object = 1.0

    def __post_init__(self):
        if not (self.mu > 0 and self.rho > 0):
            raise ValueError("mu and rho must be positive")
        if not self.beta_f >= 0:
            raise ValueError("beta_f must be nonnegative")
        if not callable(self.k_perm):
            K = np.asarray(self.k_perm, dtype=float)
            if K.ndim == 0 and not K > 0:
                raise ValueError("k_perm must be positive")
            if K.ndim == 2 and (K.shape != (2, 2) or np.linalg.eigvalsh(K)[0] <= 0):
                raise ValueError("k_perm must be 2x2 SPD")

    def kinv_at(self, pts) -> np.ndarray:
        """``K^{-1}`` at points as ``(N, 2, 2)``."""
        pts = np.atleast_2d(pts)
        if callable(self.k_perm):
            K = np.asarray(self.k_perm(pts), dtype=float)
        else:
            K = np.broadcast_to(np.asarray(self.k_perm, dtype=float),
                                (len(pts),) + np.shape(self.k_perm))
        if K.ndim == 1:
            return (1.0 / K)[:, None, None] * np.eye(2)
        return np.linalg.inv(K)


def _scalar_kinv(blocks, tol=0.0):
    """Per-element scalar when every block is a multiple of the identity, else None."""
    off = np.abs(blocks[:, 0, 1]) + np.abs(blocks[:, 1, 0])
    if np.all(off <= tol) and np.array_equal(blocks[:, 0, 0], blocks[:, 1, 1]):
        return blocks[:, 0, 0].copy()
    return None


def sigma_of_u(u, coeffs: DarcyCoeffs, kinv=None):
    """Per-element ``sigma_T = (mu K_T^{-1} + beta |u_T| I) / rho``.

    ``kinv`` holds element averages of ``K^{-1}`` (scalars or 2x2 blocks); it
    defaults to the constant permeability of ``coeffs``.  Scalar input gives
    a scalar per element.
    """
    U = np.asarray(u, dtype=float).reshape(-1, 2)
    speed = np.hypot(U[:, 0], U[:, 1])
    if kinv is None:
        if callable(coeffs.k_perm):
            raise ValueError("pass element averages of K^{-1} for a variable permeability")
        K = np.asarray(coeffs.k_perm, dtype=float)
        kinv = 1.0 / float(K) if K.ndim == 0 else np.linalg.inv(K)
    kinv = np.asarray(kinv, dtype=float)
    if kinv.ndim <= 1:
        return (coeffs.mu * kinv + coeffs.beta_f * speed) / coeffs.rho
    if kinv.ndim == 2:
        kinv = np.broadcast_to(kinv, (U.shape[0], 2, 2))
    return (coeffs.mu * kinv + coeffs.beta_f * speed[:, None, None] * np.eye(2)) / coeffs.rho


# ---------------------------------------------------------------------------
# manufactured data
# ---------------------------------------------------------------------------

def u_exact(pts) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    return np.column_stack([np.sin(np.pi * x) * np.cos(np.pi * y) + 2.0,
                            np.cos(np.pi * x) * np.sin(np.pi * y)])


def p_exact(pts) -> np.ndarray:
    # odd in x and in y, hence zero mean on the symmetric square
    return pts[:, 0] ** 3 + pts[:, 1] ** 3


def grad_p_exact(pts) -> np.ndarray:
    return np.column_stack([3.0 * pts[:, 0] ** 2, 3.0 * pts[:, 1] ** 2])


def g_exact(pts) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    return 2.0 * np.pi * np.cos(np.pi * x) * np.cos(np.pi * y)


def gN_exact(pts, normals) -> np.ndarray:
    return np.sum(u_exact(pts) * normals, axis=1)


def forcing(coeffs: DarcyCoeffs) -> Callable:
    """``f = sigma(u) u + grad p`` for the manufactured pair."""
    def f(pts):
        U = u_exact(pts)
        kinv = coeffs.kinv_at(pts)
        speed = np.hypot(U[:, 0], U[:, 1])
        visc = coeffs.mu * np.einsum("nij,nj->ni", kinv, U)
        return (visc + coeffs.beta_f * speed[:, None] * U) / coeffs.rho + grad_p_exact(pts)
    return f


# ---------------------------------------------------------------------------
# problem
# ---------------------------------------------------------------------------

@dataclass
class DarcyProblem:
    mesh: Mesh
    coeffs: DarcyCoeffs
    fem: FemOperators
    fu: np.ndarray
    gp: np.ndarray
    mg_cycles: int = 1
    mg_levels: Optional[int] = None
    manufactured: bool = True
    imex_log: List[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        blocks = self.fem.kinv_blocks
        self.kinv_scalar = _scalar_kinv(blocks)
        self.kinv = self.kinv_scalar if self.kinv_scalar is not None else blocks

    @property
    def n(self) -> int:
        return self.mesh.n

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def dofs(self) -> int:
        return self.fem.dofs

    def sigma(self, u):
        return sigma_of_u(u, self.coeffs, self.kinv)

    def weighted_mass_diag(self, sigma) -> np.ndarray:
        if np.ndim(sigma) != 1:
            raise UnsupportedOperation("diagonal primal metric needs a scalar permeability")
        return np.repeat(self.mesh.areas * sigma, 2)

    def energy(self, u) -> float:
        U = np.asarray(u, dtype=float).reshape(-1, 2)
        speed = np.hypot(U[:, 0], U[:, 1])
        if self.kinv_scalar is not None:
            quad = self.kinv_scalar * np.sum(U * U, axis=1)
        else:
            quad = np.einsum("ti,tij,tj->t", U, self.kinv, U)
        c = self.coeffs
        per = c.mu / (2 * c.rho) * quad + c.beta_f / (3 * c.rho) * speed ** 3
        return float(self.mesh.areas @ per - self.fu @ u)

    def gradient(self, u) -> np.ndarray:
        """``M0^{sigma(u)} u - fu``."""
        U = np.asarray(u, dtype=float).reshape(-1, 2)
        s = self.sigma(u)
        if np.ndim(s) == 1:
            Su = s[:, None] * U
        else:
            Su = np.einsum("tij,tj->ti", s, U)
        return (self.mesh.areas[:, None] * Su).ravel() - self.fu

    def oracle(self) -> GradientOracle:
        return GradientOracle(self.fem.n_velocity, self.gradient, eval=self.energy)


def make_manufactured_problem(n: int, coeffs: Optional[DarcyCoeffs] = None,
                              mg_cycles: int = 1, mg_levels: Optional[int] = None) -> DarcyProblem:
    """Manufactured Darcy-Forchheimer problem on the ``n x n`` structured mesh.

    Exact solution ``u = (sin(pi x) cos(pi y) + 2, cos(pi x) sin(pi y))``,
    ``p = x^3 + y^3``; ``f``, ``g = div u`` and ``g_N = u.n`` follow
    analytically.  The discrete load ``gp`` is projected onto the sum-zero
    subspace, the range of ``B``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    coeffs = DarcyCoeffs() if coeffs is None else coeffs
    mesh = build_structured_mesh(n)
    fem = assemble_operators(mesh, coeffs.k_perm)
    fu, gp = assemble_rhs(mesh, forcing(coeffs), g_exact, gN_exact)
    return DarcyProblem(mesh, coeffs, fem, fu, project_constants(gp), mg_cycles, mg_levels)


def darcy_residual(state: PrimalDualState, prob: DarcyProblem):
    """``(fu - M0^{sigma(u)} u - B^T p,  gp - B u)``."""
    ru = -(prob.gradient(state.u) + prob.fem.b_mat.T @ state.p)
    rp = prob.gp - prob.fem.b_mat @ state.u
    return ru, rp


# ---------------------------------------------------------------------------
# IMEX closed form
# ---------------------------------------------------------------------------

def imex_velocity_update(u_k, grad_p, alpha: float, sigma_k, coeffs: DarcyCoeffs, f_el,
                         kinv=None, return_v: bool = False):
    """Element-wise solution of the semi-implicit velocity equation.

    With ``v = (sigma/alpha) u_k - (mu/rho) K^{-1} u_k - grad p + f`` the new
    velocity solves ``(sigma/alpha) u + (beta/rho) |u| u = v``, i.e.
    ``u = v / eta`` with
    ``eta = sigma/(2 alpha) + sqrt((sigma/alpha)^2 + 4 (beta/rho) |v|) / 2``.

    Parameters
    ----------
    u_k, grad_p, f_el : (N_t, 2) arrays (``f_el`` is the load per unit area)
    sigma_k : (N_t,) scalars
    kinv : (N_t,) scalars, defaults to the constant permeability
    return_v : bool
        Also return ``v`` (for residual checks).
    """
    sigma_k = np.asarray(sigma_k, dtype=float)
    if sigma_k.ndim != 1:
        raise UnsupportedOperation("closed-form IMEX update needs a scalar permeability")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if kinv is None:
        K = np.asarray(coeffs.k_perm, dtype=float)
        if K.ndim != 0:
            raise UnsupportedOperation("closed-form IMEX update needs a scalar permeability")
        kinv = 1.0 / float(K)
    uk = np.asarray(u_k, dtype=float).reshape(-1, 2)
    kinv = np.asarray(kinv, dtype=float)
    kin = kinv[:, None] if kinv.ndim == 1 else kinv
    s = sigma_k[:, None]
    v = (s / alpha) * uk - (coeffs.mu / coeffs.rho) * kin * uk - grad_p + f_el
    vn = np.hypot(v[:, 0], v[:, 1])
    sa = sigma_k / alpha
    if coeffs.beta_f == 0:
        # the square root collapses; keep the linear step free of its rounding
        eta = sa
    else:
        eta = sigma_k / (2 * alpha) + 0.5 * np.sqrt(sa * sa + 4 * (coeffs.beta_f / coeffs.rho) * vn)
    u = v / eta[:, None]
    return (u, v) if return_v else u


def imex_element_residual(u_next, v, alpha: float, sigma_k, coeffs: DarcyCoeffs) -> np.ndarray:
    """``|(sigma/alpha + (beta/rho)|u|) |u| - |v|| / |v|`` per element (0 where v = 0)."""
    U = np.asarray(u_next).reshape(-1, 2)
    un = np.hypot(U[:, 0], U[:, 1])
    vn = np.hypot(v[:, 0], v[:, 1])
    lhs = (sigma_k / alpha + coeffs.beta_f / coeffs.rho * un) * un
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(vn > 0, np.abs(lhs - vn) / vn, np.abs(lhs))
    return rel


# ---------------------------------------------------------------------------
# saddle-point wiring
# ---------------------------------------------------------------------------

def saddle_problem(prob: DarcyProblem) -> SaddleProblem:
    """TPDv data: ``I_V = M0^{sigma_k}``, ``S~_k = S_k`` (variable Laplacian)
    and ``I_Q^{-1}`` as ``m`` V-cycles on the interpolated Laplacian.
    """
    mesh, fem = prob.mesh, prob.fem
    areas = mesh.areas
    mg_update = MgDualUpdate(mesh, prob.mg_cycles, prob.mg_levels)
    cache = {}

    def sigma_at(u):
        # iv_factory, stilde_factory and the implicit substep share sigma(u_k)
        if cache.get("u") is not u:
            cache.update(u=u, sigma=prob.sigma(u))
        return cache["sigma"]

    def iv_factory(state):
        return SpdOperator.diagonal(prob.weighted_mass_diag(sigma_at(state.u)))

    def stilde_factory(state, iv):
        S = assemble_variable_laplacian(mesh, sigma_at(state.u))
        return SpdOperator(S.shape[0], S.dot, None, lambda: S)

    def iq0_factory(state, iv):
        return mg_update.operator(stilde_factory(state, iv).materialize())

    f_el = prob.fu.reshape(-1, 2) / areas[:, None]

    def implicit_substep(u_k, p_next, alpha, iv):
        s = sigma_at(u_k)
        grad_p = (fem.grad @ p_next).reshape(-1, 2)
        u_next, v = imex_velocity_update(u_k, grad_p, alpha, s, prob.coeffs, f_el,
                                         prob.kinv_scalar, return_v=True)
        prob.imex_log.append(float(np.max(imex_element_residual(u_next, v, alpha, s,
                                                                prob.coeffs), initial=0.0)))
        return u_next.ravel()

    def implicit_gradient(u_next, u_k):
        c = prob.coeffs
        Uk = u_k.reshape(-1, 2)
        Un = u_next.reshape(-1, 2)
        speed = np.hypot(Un[:, 0], Un[:, 1])
        lin = (c.mu / c.rho) * prob.kinv_scalar[:, None] * Uk
        forch = (c.beta_f / c.rho) * speed[:, None] * Un
        return (areas[:, None] * (lin + forch)).ravel() - prob.fu

    return SaddleProblem(
        prob.oracle(), fem.b_mat, prob.gp, iv_factory, stilde_factory,
        implicit_substep=implicit_substep if prob.kinv_scalar is not None else None,
        implicit_gradient=implicit_gradient if prob.kinv_scalar is not None else None,
        iq_update=mg_update, iq0_factory=iq0_factory,
        project_dual=lambda p: apply_zero_mean(p, mesh), check_rank=False)


def solve_darcy(prob: DarcyProblem, params: TpdvParams, tol: float = 1e-6,
                max_iter: int = 500, on_step=None) -> ConvergenceRecord:
    prob.imex_log.clear()
    rec = solve(saddle_problem(prob), params, tol=tol, max_iter=max_iter, on_step=on_step)
    rec.dofs = prob.dofs
    return rec


def velocity_error(u, prob: DarcyProblem) -> float:
    """``L2`` distance between the P0 velocity and the exact one at centroids."""
    U = np.asarray(u).reshape(-1, 2)
    d = U - u_exact(prob.mesh.centroids)
    return float(np.sqrt(prob.mesh.areas @ np.sum(d * d, axis=1)))


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkRow:
    n: int
    h: float
    dofs: int
    iterations: int
    vcycles: int
    seconds: float
    status: str
    record: Optional[ConvergenceRecord] = field(default=None, repr=False)


@dataclass
class BenchmarkTable:
    variant: str
    rows: List[BenchmarkRow]

    def to_csv(self, path=None, include_seconds: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = [c for c in BENCH_HEADER if include_seconds or c != "seconds"]
        w.writerow(header)
        for r in self.rows:
            vals = {"h": repr(r.h), "dofs": r.dofs, "iterations": r.iterations,
                    "vcycles": r.vcycles, "seconds": f"{r.seconds:.3f}", "status": r.status}
            w.writerow([vals[c] for c in header])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_text(self) -> str:
        lines = [f"{'h':>8} {'dofs':>9} {'iterations':>10} {'vcycles':>8} {'seconds':>9}  status"]
        for r in self.rows:
            lines.append(f"{_hlabel(r.h):>8} {r.dofs:>9d} {r.iterations:>10d} {r.vcycles:>8d} "
                         f"{r.seconds:>9.2f}  {r.status}")
        return "\n".join(lines)


def _hlabel(h: float) -> str:
    inv = 1.0 / h
    return f"1/{int(round(inv))}" if abs(inv - round(inv)) < 1e-9 else f"{h:.4g}"


def run_benchmark(variant: str, n_list, params: Optional[TpdvParams] = None, tol: float = 1e-6,
                  max_iter: int = 500, coeffs: Optional[DarcyCoeffs] = None,
                  mg_cycles: int = 1) -> BenchmarkTable:
    """Iteration counts of one variant over a list of meshes (``h = 2/n``)."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    params = DEFAULT_PARAMS[variant] if params is None else params
    rows = []
    for n in n_list:
        prob = make_manufactured_problem(n, coeffs, mg_cycles)
        t0 = time.perf_counter()
        rec = solve_darcy(prob, params, tol=tol, max_iter=max_iter)
        secs = time.perf_counter() - t0
        rows.append(BenchmarkRow(n, prob.h, prob.dofs, rec.iterations, rec.total_vcycles,
                                 secs, rec.status, rec))
    return BenchmarkTable(variant, rows)


def h_to_n(h: float) -> int:
    """Subdivisions of (-1,1)^2 giving mesh size ``h``."""
    n = 2.0 / h
    if abs(n - round(n)) > 1e-9 or round(n) < 2:
        raise ValueError(f"h={h} does not divide the domain")
    return int(round(n))
