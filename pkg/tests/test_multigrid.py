import numpy as np
import pytest

from tpdv.fem2d import assemble_variable_laplacian, build_structured_mesh
from tpdv.multigrid import (MgDualUpdate, build_hierarchy, contraction_factor, level_residuals,
                            mg_inverse, mg_solve, project_constants, projected_direct_solve,
                            prolongation, vcycle)
from tpdv.numerics import SpdOperator

from conftest import smooth_sigma_fields


def laplacian(n, sigma=None):
    mesh = build_structured_mesh(n)
    s = np.ones(mesh.n_triangles) if sigma is None else sigma(mesh)
    return mesh, assemble_variable_laplacian(mesh, s)


def test_prolongation_reproduces_linears():
    P = prolongation(3)
    xc = build_structured_mesh(3).vertices
    xf = build_structured_mesh(6).vertices
    f = 2 * xc[:, 0] - xc[:, 1] + 0.5
    assert np.allclose(P @ f, 2 * xf[:, 0] - xf[:, 1] + 0.5)


def test_zero_rhs_gives_zero():
    mesh, A = laplacian(16)
    h = build_hierarchy(mesh, None, A)
    assert not vcycle(h, np.zeros(h.dim)).any()


def test_single_level_is_exact(rng):
    mesh, A = laplacian(4)
    h = build_hierarchy(mesh, 1, A)
    b = rng.standard_normal(h.dim)
    x = vcycle(h, b)
    assert np.allclose(x, projected_direct_solve(A, b), atol=1e-12)
    assert abs(x.sum()) < 1e-12


def test_galerkin_identity():
    mesh, A = laplacian(16, lambda m: 1 + m.centroids[:, 0] ** 2)
    h = build_hierarchy(mesh, None, A)
    assert h.n_levels == 3
    for fine, coarse in zip(h.levels[:-1], h.levels[1:]):
        P = fine.prolongation
        assert abs(coarse.matrix - P.T @ fine.matrix @ P).max() < 1e-12


def test_coarse_operator_equals_direct_assembly():
    mesh, A = laplacian(16)
    h = build_hierarchy(mesh, 3, A)
    _, A4 = laplacian(4)
    assert abs(h.levels[-1].matrix - A4).max() < 1e-10


def test_level_mismatch():
    mesh, A = laplacian(12)
    with pytest.raises(ValueError):
        build_hierarchy(mesh, 4, A)
    with pytest.raises(ValueError):
        build_hierarchy(build_structured_mesh(8), None, A)


def test_poisson_contraction():
    mesh, A = laplacian(128)
    rho = contraction_factor(build_hierarchy(mesh, None, A))
    assert 0.0 < rho <= 0.25


@pytest.mark.parametrize("name", ["sine", "ramp", "bump"])
def test_variable_coefficient_contraction(name):
    mesh = build_structured_mesh(32)
    A = assemble_variable_laplacian(mesh, smooth_sigma_fields(mesh)[name])
    assert contraction_factor(build_hierarchy(mesh, None, A)) <= 0.25


def test_mg_inverse_many_cycles_is_direct(rng):
    mesh, A = laplacian(16, lambda m: 10.0 ** m.centroids[:, 0])
    op = mg_inverse(build_hierarchy(mesh, None, A), m=30)
    for _ in range(3):
        b = rng.standard_normal(op.dim)
        ref = projected_direct_solve(A, b)
        assert np.abs(op.inv_apply(b) - ref).max() <= 1e-8 * np.abs(ref).max()


def test_mg_inverse_linear_and_symmetric(rng):
    mesh, A = laplacian(16, lambda m: 1 + m.centroids[:, 1] ** 2)
    op = mg_inverse(build_hierarchy(mesh, None, A), m=1)
    x, y = project_constants(rng.standard_normal(op.dim)), project_constants(
        rng.standard_normal(op.dim))
    a, b = 0.3, -1.7
    lhs = op.inv_apply(a * x + b * y)
    rhs = a * op.inv_apply(x) + b * op.inv_apply(y)
    assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(rhs).max()
    assert abs(op.inv_apply(x) @ y - x @ op.inv_apply(y)) <= 1e-10 * abs(x @ op.inv_apply(y))
    assert op.inv_apply(x) @ x > 0
    assert op.inv_cost == 1


def test_more_cycles_shrink_error_by_contraction(rng):
    mesh, A = laplacian(32, lambda m: 10.0 ** (1 + m.centroids[:, 0]))
    h = build_hierarchy(mesh, None, A)
    rho = contraction_factor(h)
    b = project_constants(rng.standard_normal(h.dim))
    xs = projected_direct_solve(A, b)

    def enorm(e):
        return np.sqrt(e @ (A @ e))

    e1, e2 = enorm(mg_solve(h, b, 1) - xs), enorm(mg_solve(h, b, 2) - xs)
    assert e2 / e1 <= 1.05 * rho


def test_level_residuals_shape(rng):
    mesh, A = laplacian(16)
    h = build_hierarchy(mesh, None, A)
    b = rng.standard_normal(h.dim)
    r = level_residuals(h, b, vcycle(h, b))
    assert len(r) == h.n_levels


def test_dual_update_is_convex_combination(rng):
    mesh = build_structured_mesh(8)
    A1 = assemble_variable_laplacian(mesh, np.ones(mesh.n_triangles))
    A2 = assemble_variable_laplacian(mesh, rng.uniform(0.5, 2, mesh.n_triangles))
    upd = MgDualUpdate(mesh, m=2)
    op = upd(SpdOperator.from_matrix(A1, factorize=False),
             SpdOperator.from_matrix(A2, factorize=False), 0.5, 2.0)
    assert abs(op.materialize() - 0.5 * (A1 + A2)).max() < 1e-14
    assert op.inv_cost == 2
