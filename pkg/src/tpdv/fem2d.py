"""Lowest-order mixed finite elements on structured triangulations of (-1,1)^2.

Velocities are piecewise-constant vectors (P0) stored interleaved per element,
``[u_0x, u_0y, u_1x, u_1y, ...]``; pressures are continuous piecewise linear
(P1) nodal values.  The discrete operators are

* ``M0^sigma``: block-diagonal weighted mass, blocks ``sigma_T |T|``;
* ``G``: nodal P1 values to per-element gradients;
* ``B = G^T M0``, so that ``(B u)_i = (u, grad phi_i)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .numerics import canonical_csr

# Gauss-Legendre points used for the compatibility check on the square
_COMPAT_POINTS = 40
COMPAT_TOL = 1e-8


@dataclass(frozen=True)
class Mesh:
    """Structured triangulation of ``(-1, 1)^2``.

    Attributes
    ----------
    vertices : (N_n, 2) array, row-major, index ``j (n+1) + i``
    triangles : (N_t, 3) int array, counterclockwise
    boundary_edges : (N_b, 2) int array, traversed counterclockwise
    normals : (N_b, 2) outward unit normals of the boundary edges
    areas : (N_t,) triangle areas
    n : subdivisions per side, ``h = 2 / n``
    level : refinement depth
    parents : (N_n, 2) int array or None
        For a refined mesh, the two coarse vertices whose average is each
        fine vertex (equal indices for vertices already on the coarse mesh).
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    n: int
    level: int = 0
    parents: Optional[np.ndarray] = None

    @property
    def h(self) -> float:
        return 2.0 / self.n

    @property
    def n_nodes(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def node_weights(self) -> np.ndarray:
        """``int phi_i``, i.e. the lumped P1 mass."""
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return w

    def edge_counts(self) -> dict:
        """Number of triangles sharing each (sorted) edge."""
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        keys, counts = np.unique(e, axis=0, return_counts=True)
        return {tuple(k): int(c) for k, c in zip(keys, counts)}


def build_structured_mesh(n: int, level: int = 0) -> Mesh:
    """Uniform ``n x n`` grid on ``(-1,1)^2``, each cell cut along the same diagonal.

    Cell ``(i, j)`` with corners ``v00, v10, v01, v11`` yields the triangles
    ``(v00, v10, v11)`` and ``(v00, v11, v01)``.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    x = -1.0 + 2.0 * np.arange(n + 1) / n
    X, Y = np.meshgrid(x, x)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v00, v10, v11])
    tris[1::2] = np.column_stack([v00, v11, v01])

    r = np.arange(n)
    bottom = np.column_stack([r, r + 1])
    right = np.column_stack([r * (n + 1) + n, (r + 1) * (n + 1) + n])
    top = np.column_stack([n * (n + 1) + n - r, n * (n + 1) + n - r - 1])
    left = np.column_stack([(n - r) * (n + 1), (n - r - 1) * (n + 1)])
    edges = np.vstack([bottom, right, top, left]).astype(np.int64)
    normals = np.repeat(np.array([[0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]), n, axis=0)

    areas = _areas(vertices, tris)
    return Mesh(vertices, tris, edges, normals, areas, n, level)


def _areas(vertices, tris) -> np.ndarray:
    p = vertices[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def refine(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle split into four through its edge midpoints.

    For the single-diagonal structured mesh the result is the structured mesh
    with ``2 n`` subdivisions; the parent map records, for each fine vertex,
    the coarse vertices it interpolates between.
    """
    n = mesh.n
    N = 2 * n
    fine = build_structured_mesh(N, mesh.level + 1)
    I, J = np.meshgrid(np.arange(N + 1), np.arange(N + 1))
    I, J = I.ravel(), J.ravel()
    i0, j0 = I // 2, J // 2
    i1, j1 = (I + 1) // 2, (J + 1) // 2
    parents = np.column_stack([j0 * (n + 1) + i0, j1 * (n + 1) + i1])
    return Mesh(fine.vertices, fine.triangles, fine.boundary_edges, fine.normals,
                fine.areas, N, mesh.level + 1, parents)


def mesh_hierarchy(n_coarse: int, levels: int):
    """Meshes ``[n_coarse, 2 n_coarse, ...]`` with ``levels`` entries, nested by refine."""
    meshes = [build_structured_mesh(n_coarse)]
    for _ in range(levels - 1):
        meshes.append(refine(meshes[-1]))
    return meshes


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text node and element lists."""
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.n_nodes}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x!r} {y!r}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")


# ---------------------------------------------------------------------------
# element quantities
# ---------------------------------------------------------------------------

def element_gradients(mesh: Mesh) -> np.ndarray:
    """``(N_t, 3, 2)`` gradients of the barycentric basis functions.

    Within each element the gradient of the vertex with the largest global
    index is set to minus the sum of the other two (summed in index order),
    so that ``G 1`` vanishes exactly in floating point.
    """
    p = mesh.vertices[mesh.triangles]
    twice = 2.0 * mesh.areas[:, None]
    g = np.empty((mesh.n_triangles, 3, 2))
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        e = p[:, c] - p[:, b]
        g[:, a, 0] = -e[:, 1] / twice[:, 0]
        g[:, a, 1] = e[:, 0] / twice[:, 0]
    order = np.argsort(mesh.triangles, axis=1, kind="stable")
    rows = np.arange(mesh.n_triangles)
    first, second, last = order[:, 0], order[:, 1], order[:, 2]
    g[rows, last] = -(g[rows, first] + g[rows, second])
    return g


def _check_sigma(sigma, n_t):
    s = np.asarray(sigma, dtype=float)
    if s.ndim == 0:
        s = np.full(n_t, float(s))
    if s.ndim == 1:
        if s.shape != (n_t,):
            raise ValueError(f"sigma has {s.size} entries for {n_t} elements")
        if np.any(s <= 0):
            raise ValueError("sigma must be positive")
        return s
    if s.shape != (n_t, 2, 2):
        raise ValueError("tensor sigma must have shape (N_t, 2, 2)")
    if np.any(np.linalg.eigvalsh(0.5 * (s + s.transpose(0, 2, 1)))[:, 0] <= 0):
        raise ValueError("sigma blocks must be SPD")
    return s


def _block_diag(blocks) -> sp.csr_matrix:
    """Block-diagonal CSR from ``(N, 2, 2)`` blocks."""
    n = blocks.shape[0]
    base = 2 * np.arange(n)
    rows = np.repeat(base, 4) + np.tile([0, 0, 1, 1], n)
    cols = np.repeat(base, 4) + np.tile([0, 1, 0, 1], n)
    return canonical_csr(sp.coo_matrix((blocks.reshape(-1), (rows, cols)), shape=(2 * n, 2 * n)))


def assemble_weighted_p0_mass(mesh: Mesh, sigma=1.0) -> sp.csr_matrix:
    """Block-diagonal ``M0^sigma`` with blocks ``sigma_T |T|``.

    ``sigma`` is a scalar, a per-element array, or ``(N_t, 2, 2)`` SPD blocks.
    """
    s = _check_sigma(sigma, mesh.n_triangles)
    if s.ndim == 1:
        d = np.repeat(s * mesh.areas, 2)
        return canonical_csr(sp.diags(d, format="csr"))
    return _block_diag(s * mesh.areas[:, None, None])


def assemble_gradient(mesh: Mesh) -> sp.csr_matrix:
    """``G``: P1 nodal values to interleaved per-element gradients."""
    g = element_gradients(mesh)
    nt = mesh.n_triangles
    rows = (2 * np.arange(nt)[:, None, None] + np.arange(2)[None, None, :])
    rows = np.broadcast_to(rows, (nt, 3, 2))
    cols = np.broadcast_to(mesh.triangles[:, :, None], (nt, 3, 2))
    # order entries by row then column so that canonicalization keeps the
    # within-row summation order used by element_gradients
    G = sp.coo_matrix((g.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * nt, mesh.n_nodes))
    return canonical_csr(G)


def assemble_kinv(mesh: Mesh, k_perm=1.0):
    """Element averages of ``K^{-1}``, returned as ``(blocks, sparse matrix)``.

    ``k_perm`` is a positive scalar, a 2x2 SPD matrix, or a callable
    ``(points (N,2)) -> (N,)`` or ``(N,2,2)``.  Averages use the three-point
    edge-midpoint rule.
    """
    nt = mesh.n_triangles
    if callable(k_perm):
        p = mesh.vertices[mesh.triangles]
        mids = [(p[:, 0] + p[:, 1]) / 2, (p[:, 1] + p[:, 2]) / 2, (p[:, 2] + p[:, 0]) / 2]
        acc = np.zeros((nt, 2, 2))
        for m in mids:
            K = np.asarray(k_perm(m), dtype=float)
            if K.ndim == 1:
                K = K[:, None, None] * np.eye(2)
            acc += np.linalg.inv(K) / 3.0
        blocks = acc
    else:
        K = np.asarray(k_perm, dtype=float)
        if K.ndim == 0:
            if K <= 0:
                raise ValueError("permeability must be positive")
            K = K * np.eye(2)
        if K.shape != (2, 2) or np.linalg.eigvalsh(K)[0] <= 0:
            raise ValueError("permeability must be a positive scalar or 2x2 SPD")
        blocks = np.broadcast_to(np.linalg.inv(K), (nt, 2, 2)).copy()
    return blocks, _block_diag(blocks)


def assemble_variable_laplacian(mesh: Mesh, sigma) -> sp.csr_matrix:
    """P1 stiffness with coefficient ``sigma^{-1}``, assembled element by element.

    Equals ``G^T M0 (M0^sigma)^{-1} M0 G``; for scalar ``sigma`` the element
    matrix is ``(|T| / sigma_T) grad phi_i . grad phi_j``.
    """
    s = _check_sigma(sigma, mesh.n_triangles)
    g = element_gradients(mesh)
    if s.ndim == 1:
        ke = (mesh.areas / s)[:, None, None] * np.einsum("tad,tbd->tab", g, g)
    else:
        sinv = np.linalg.inv(s)
        ke = mesh.areas[:, None, None] * np.einsum("tad,tde,tbe->tab", g, sinv, g)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    A = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))
    return canonical_csr(A)


def laplacian_product_form(fem: "FemOperators", sigma) -> sp.csr_matrix:
    """``G^T M0 (M0^sigma)^{-1} M0 G`` by sparse products."""
    mesh = fem.mesh
    s = _check_sigma(sigma, mesh.n_triangles)
    if s.ndim == 1:
        w = np.repeat(mesh.areas / s, 2)
        D = sp.diags(w, format="csr")
    else:
        D = _block_diag(mesh.areas[:, None, None] * np.linalg.inv(s))
    G = fem.grad
    return canonical_csr(G.T @ (D @ G))


def apply_zero_mean(p, mesh: Mesh) -> np.ndarray:
    """``p - (int p / |Omega|) 1`` with the exact P1 integral."""
    p = np.asarray(p, dtype=float)
    w = mesh.node_weights()
    return p - (w @ p) / w.sum()


def integral_p1(p, mesh: Mesh) -> float:
    return float(mesh.node_weights() @ np.asarray(p, dtype=float))


# ---------------------------------------------------------------------------
# loads
# ---------------------------------------------------------------------------

def _compatibility_defect(mesh: Mesh, g_exact: Callable, gN_exact: Callable) -> float:
    """``int g - int g_N`` by Gauss-Legendre rules on the rectangular domain."""
    x, w = np.polynomial.legendre.leggauss(_COMPAT_POINTS)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    c, r = (hi + lo) / 2, (hi - lo) / 2
    X, Y = np.meshgrid(c[0] + r[0] * x, c[1] + r[1] * x)
    W = np.outer(w, w) * r[0] * r[1]
    area = float(np.sum(W.ravel() * np.asarray(g_exact(np.column_stack([X.ravel(), Y.ravel()])))))
    flux = 0.0
    sides = [  # points along the side, outward normal, half length
        (lambda s: np.column_stack([c[0] + r[0] * s, np.full_like(s, lo[1])]), (0.0, -1.0), r[0]),
        (lambda s: np.column_stack([np.full_like(s, hi[0]), c[1] + r[1] * s]), (1.0, 0.0), r[1]),
        (lambda s: np.column_stack([c[0] + r[0] * s, np.full_like(s, hi[1])]), (0.0, 1.0), r[0]),
        (lambda s: np.column_stack([np.full_like(s, lo[0]), c[1] + r[1] * s]), (-1.0, 0.0), r[1]),
    ]
    for pts, nrm, half in sides:
        P = pts(x)
        N = np.tile(np.array(nrm), (x.size, 1))
        flux += half * float(w @ np.asarray(gN_exact(P, N)))
    return area - flux


def assemble_rhs(mesh: Mesh, f_exact: Callable, g_exact: Callable, gN_exact: Callable,
                 check_compat: bool = True):
    """Loads ``fu = (f, v)`` and ``gp = -(g, phi) + (g_N, phi)_boundary``.

    Parameters
    ----------
    f_exact : callable
        ``points (N,2) -> (N,2)``; integrated with the midpoint rule.
    g_exact : callable
        ``points (N,2) -> (N,)``; integrated with the edge-midpoint rule.
    gN_exact : callable
        ``(points (N,2), normals (N,2)) -> (N,)``; two-point Gauss per edge.

    A ``RuntimeWarning`` is issued when ``int g`` and ``int g_N`` differ by
    more than ``COMPAT_TOL``.
    """
    if check_compat:
        defect = _compatibility_defect(mesh, g_exact, gN_exact)
        if abs(defect) > COMPAT_TOL:
            warnings.warn(f"incompatible data: int g - int g_N = {defect:.3e}", RuntimeWarning)

    fvals = np.asarray(f_exact(mesh.centroids), dtype=float).reshape(mesh.n_triangles, 2)
    fu = (fvals * mesh.areas[:, None]).ravel()

    p = mesh.vertices[mesh.triangles]
    gp = np.zeros(mesh.n_nodes)
    # midpoint of the edge opposite vertex a carries phi_a = 0, the others 1/2
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        gm = np.asarray(g_exact((p[:, b] + p[:, c]) / 2), dtype=float)
        contrib = mesh.areas / 3.0 * gm * 0.5
        np.add.at(gp, mesh.triangles[:, b], -contrib)
        np.add.at(gp, mesh.triangles[:, c], -contrib)

    e = mesh.boundary_edges
    x0, x1 = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    length = np.linalg.norm(x1 - x0, axis=1)
    for s in (0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)):
        q = (1 - s) * x0 + s * x1
        val = np.asarray(gN_exact(q, mesh.normals), dtype=float) * length * 0.5
        np.add.at(gp, e[:, 0], val * (1 - s))
        np.add.at(gp, e[:, 1], val * s)
    return fu, gp


# ---------------------------------------------------------------------------
# operator bundle
# ---------------------------------------------------------------------------

@dataclass
class FemOperators:
    mesh: Mesh
    m0: sp.csr_matrix
    grad: sp.csr_matrix
    b_mat: sp.csr_matrix
    kinv: sp.csr_matrix
    kinv_blocks: np.ndarray

    @property
    def n_velocity(self) -> int:
        return 2 * self.mesh.n_triangles

    @property
    def n_pressure(self) -> int:
        return self.mesh.n_nodes

    @property
    def dofs(self) -> int:
        return self.n_velocity + self.n_pressure


def assemble_operators(mesh: Mesh, k_perm=1.0) -> FemOperators:
    m0 = assemble_weighted_p0_mass(mesh, 1.0)
    G = assemble_gradient(mesh)
    B = canonical_csr(G.T @ m0)
    blocks, kinv = assemble_kinv(mesh, k_perm)
    return FemOperators(mesh, m0, G, B, kinv, blocks)
