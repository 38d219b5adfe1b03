import numpy as np
import pytest
import scipy.sparse as sp
from scipy.optimize import brentq

from tpdv.darcy import (BENCH_HEADER, DarcyCoeffs, darcy_residual, g_exact, gN_exact,
                        h_to_n, imex_element_residual, imex_velocity_update,
                        make_manufactured_problem, run_benchmark, saddle_problem, sigma_of_u,
                        solve_darcy, velocity_error)
from tpdv.exceptions import UnsupportedOperation
from tpdv.fem2d import _compatibility_defect, assemble_weighted_p0_mass, integral_p1
from tpdv.numerics import check_gradient
from tpdv.solver import PrimalDualState, TpdvParams


# --- coefficients ---------------------------------------------------------

def test_sigma_at_rest():
    assert np.all(sigma_of_u(np.zeros(10), DarcyCoeffs()) == 1.0)


def test_sigma_unit_speed():
    u = np.array([1.0, 0.0, 0.6, 0.8])
    assert np.allclose(sigma_of_u(u, DarcyCoeffs()), 31.0)


def test_sigma_density_scaling(rng):
    u = rng.standard_normal(8)
    s1 = sigma_of_u(u, DarcyCoeffs(rho=1.5))
    s2 = sigma_of_u(u, DarcyCoeffs(rho=3.0))
    assert np.allclose(s2, s1 / 2)


def test_sigma_tensor_permeability():
    K = np.array([[2.0, 0.0], [0.0, 4.0]])
    s = sigma_of_u(np.zeros(2), DarcyCoeffs(k_perm=K))
    assert np.allclose(s[0], np.diag([0.5, 0.25]))


@pytest.mark.parametrize("kw", [dict(mu=0.0), dict(rho=-1.0), dict(beta_f=-1.0),
                                dict(k_perm=-2.0), dict(k_perm=[[1.0, 2.0], [2.0, 1.0]])])
def test_coeff_validation(kw):
    with pytest.raises(ValueError):
        DarcyCoeffs(**kw)


# --- IMEX closed form -----------------------------------------------------

def imex_inputs(rng, nt=50):
    uk = rng.standard_normal((nt, 2))
    gp = rng.standard_normal((nt, 2))
    f = rng.standard_normal((nt, 2))
    return uk, gp, f


def test_imex_linear_case(rng):
    c = DarcyCoeffs(beta_f=0.0)
    uk, gp, f = imex_inputs(rng)
    sigma = sigma_of_u(uk, c)
    alpha = 0.7
    u, v = imex_velocity_update(uk, gp, alpha, sigma, c, f, return_v=True)
    assert np.array_equal(v, (sigma[:, None] / alpha) * uk - uk - gp + f)
    # linear implicit step: (sigma/alpha) u = v
    assert np.array_equal(u, v / (sigma / alpha)[:, None])


def test_imex_magnitude_equation(rng):
    c = DarcyCoeffs()
    uk, gp, f = imex_inputs(rng)
    sigma = sigma_of_u(uk, c)
    alpha = 1.5
    u, v = imex_velocity_update(uk, gp, alpha, sigma, c, f, return_v=True)
    for i in range(len(u)):
        vn = np.hypot(*v[i])
        r = brentq(lambda s: (sigma[i] / alpha + c.beta_f * s) * s - vn, 0.0, vn * alpha / sigma[i])
        assert np.hypot(*u[i]) == pytest.approx(r, rel=1e-12)
        assert np.allclose(u[i] / np.hypot(*u[i]), v[i] / vn)
    assert imex_element_residual(u, v, alpha, sigma, c).max() <= 1e-12


def test_imex_zero_v():
    c = DarcyCoeffs()
    uk = np.zeros((3, 2))
    f = np.zeros((3, 2))
    u = imex_velocity_update(uk, np.zeros((3, 2)), 1.0, np.ones(3), c, f)
    assert not u.any()


def test_imex_rejects_tensor_permeability():
    c = DarcyCoeffs(k_perm=np.eye(2) * 2.0)
    with pytest.raises(UnsupportedOperation):
        imex_velocity_update(np.zeros((2, 2)), np.zeros((2, 2)), 1.0, np.ones(2), c,
                             np.zeros((2, 2)))


# --- problem --------------------------------------------------------------

def test_manufactured_data_compatible():
    prob = make_manufactured_problem(4)
    assert abs(_compatibility_defect(prob.mesh, g_exact, gN_exact)) <= 1e-8
    assert abs(prob.gp.sum()) < 1e-12


def test_default_coefficients():
    c = DarcyCoeffs()
    assert (c.mu, c.rho, c.beta_f, c.k_perm) == (1.0, 1.0, 30.0, 1.0)


def test_gradient_consistent_with_energy(rng):
    prob = make_manufactured_problem(4)
    f = prob.oracle()
    for _ in range(3):
        assert check_gradient(f, rng.standard_normal(f.dim)) <= 1e-6


def test_residual_at_zero():
    prob = make_manufactured_problem(4)
    z = PrimalDualState(np.zeros(prob.fem.n_velocity), np.zeros(prob.fem.n_pressure), None)
    ru, rp = darcy_residual(z, prob)
    assert np.array_equal(ru, prob.fu) and np.array_equal(rp, prob.gp)


def test_linear_residual_matches_dense_kkt(rng):
    c = DarcyCoeffs(beta_f=0.0, mu=2.0, rho=0.5)
    prob = make_manufactured_problem(4, c)
    M = assemble_weighted_p0_mass(prob.mesh, c.mu / c.rho).toarray()
    B = prob.fem.b_mat.toarray()
    u, p = rng.standard_normal(B.shape[1]), rng.standard_normal(B.shape[0])
    ru, rp = darcy_residual(PrimalDualState(u, p, None), prob)
    assert np.allclose(ru, prob.fu - M @ u - B.T @ p, atol=1e-13)
    assert np.allclose(rp, prob.gp - B @ u, atol=1e-13)


def test_residual_small_at_discrete_solution():
    prob = make_manufactured_problem(8)
    rec = solve_darcy(prob, TpdvParams(0.7, 1.4), tol=1e-11, max_iter=2000)
    assert rec.converged
    ru, rp = darcy_residual(rec.state, prob)
    assert max(np.abs(ru).max(), np.abs(rp).max()) <= 1e-10 * rec.rows[0].residual_inf


def test_pressure_stays_zero_mean():
    prob = make_manufactured_problem(8)
    means = []
    solve_darcy(prob, TpdvParams(0.7, 1.4), max_iter=30,
                on_step=lambda st, *a: means.append(integral_p1(st.p, prob.mesh)))
    assert np.abs(means).max() < 1e-12


def test_linear_velocity_converges_first_order():
    c = DarcyCoeffs(beta_f=0.0)
    errs = []
    for n in (8, 16, 32):
        prob = make_manufactured_problem(n, c)
        rec = solve_darcy(prob, TpdvParams(0.7, 1.4), tol=1e-10, max_iter=3000)
        assert rec.converged
        errs.append(velocity_error(rec.state.u, prob))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 0.85)


@pytest.mark.parametrize("params", [TpdvParams(0.7, 1.4), TpdvParams(1.5, 0.9, mode="imex")])
def test_variants_converge(params):
    prob = make_manufactured_problem(16)
    rec = solve_darcy(prob, params)
    assert rec.converged
    if params.mode == "imex":
        assert len(prob.imex_log) == rec.iterations
        assert max(prob.imex_log) <= 1e-12


def test_nonlinear_solution_near_exact():
    prob = make_manufactured_problem(32)
    rec = solve_darcy(prob, TpdvParams(1.5, 0.9, mode="imex"), tol=1e-8, max_iter=500)
    assert rec.converged and velocity_error(rec.state.u, prob) < 0.1


def test_tensor_permeability_has_no_imex():
    prob = make_manufactured_problem(4, DarcyCoeffs(k_perm=np.array([[2.0, 0.5], [0.5, 1.0]])))
    sp_ = saddle_problem(prob)
    assert sp_.implicit_substep is None


# --- benchmark ------------------------------------------------------------

def test_benchmark_table(tmp_path):
    table = run_benchmark("tpdv", [8, 16])
    assert [r.n for r in table.rows] == [8, 16]
    assert all(r.status == "converged" and r.vcycles == r.iterations for r in table.rows)
    text = table.to_csv(tmp_path / "b.csv")
    assert text.splitlines()[0] == ",".join(BENCH_HEADER)
    assert "seconds" not in table.to_csv(include_seconds=False)
    assert "1/4" in table.to_text()


def test_benchmark_rejects_variant():
    with pytest.raises(ValueError):
        run_benchmark("newton", [4])


@pytest.mark.parametrize("h,n", [(1 / 16, 32), (1 / 32, 64), (0.5, 4)])
def test_h_to_n(h, n):
    assert h_to_n(h) == n


def test_h_to_n_rejects():
    with pytest.raises(ValueError):
        h_to_n(0.3)
