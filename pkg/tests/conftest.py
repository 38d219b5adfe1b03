import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.geomspace(1.0, cond, n)
    A = (Q * lam) @ Q.T
    return 0.5 * (A + A.T)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sandwich_sequence(rng, dim=10, K=6, eps=0.1, w_scale=0.9, w_fixed=None):
    """Operator sequences following the exact and the perturbed dual updates.

    ``I_Q,k = Q*^(1/2) (I + E_k) Q*^(1/2)`` with ``||E_k|| = eps`` and
    ``S~_k`` defined through the perturbed update.  Unless ``w_fixed`` is
    given, ``w_k`` is chosen so that the second hypothesis holds with
    margin ``w_scale``.  Returns the sequences and the measured delta.
    """
    def sym_perturb():
        E = rng.standard_normal((dim, dim))
        E = 0.5 * (E + E.T)
        return eps * E / np.abs(np.linalg.eigvalsh(E)).max()

    def sqrtm(M):
        lam, V = np.linalg.eigh(M)
        return (V * np.sqrt(lam)) @ V.T

    iqstar = [random_spd(rng, dim, 5.0)]
    s_seq = [random_spd(rng, dim, 20.0) for _ in range(K)]
    radius = eps / (1.0 - eps)          # rho(I - (I + E)^{-1}) bound for ||E|| = eps
    delta = radius / (1.0 - radius)
    omega = []
    for k in range(K):
        if w_fixed is None:
            lam_min = sla.eigh(s_seq[k], iqstar[k], eigvals_only=True)[0]
            # 2 delta w/(1-w) Q* <= S/2  <=>  w/(1-w) <= lam_min/(4 delta)
            r = w_scale * lam_min / (4.0 * delta)
            w = r / (1.0 + r)
        else:
            w = w_fixed
        omega.append(w)
        iqstar.append(w * iqstar[k] + (1 - w) * s_seq[k])
    iq = []
    for Q in iqstar:
        R = sqrtm(Q)
        iq.append(R @ (np.eye(dim) + sym_perturb()) @ R)
    stilde = [(iq[k + 1] - omega[k] * iq[k]) / (1 - omega[k]) for k in range(K)]
    return iqstar, iq, stilde, s_seq, omega, delta


def unit_mu_metric(A, d):
    """``diag(d)`` rescaled so that the smallest eigenvalue of ``(A, diag(d))`` is one."""
    r = 1.0 / np.sqrt(d)
    return np.diag(d * np.linalg.eigvalsh((A * r[:, None]) * r[None, :])[0])


def flow_instance(seed, n=12, m=4, cond=20.0, time_varying=False):
    """Quadratic flow with ``mu_f = 1`` relative to the primal metric.

    Returns ``(problem, ustar, pstar, init)``; the initial ``I_Q`` is a random
    SPD matrix.
    """
    from tpdv.flowsim import FlowState, interpolated_metric, quadratic_flow
    from tpdv.numerics import SpdOperator
    from tpdv.problems import kkt_solve

    rng = np.random.default_rng(seed)
    A = random_spd(rng, n, cond)
    B = rng.standard_normal((m, n))
    c = rng.standard_normal(n)
    b = B @ rng.standard_normal(n)
    M0 = unit_mu_metric(A, np.diag(A).copy())
    if time_varying:
        M1 = unit_mu_metric(A, rng.uniform(0.5, 2.0, n))
        iv = interpolated_metric(M0, M1, period=3.0)
        prob = quadratic_flow(A, B, c, b, iv)
    else:
        op = SpdOperator.from_matrix(M0)
        prob = quadratic_flow(A, B, c, b, lambda t: op, constant=True)
    ustar, pstar = kkt_solve(A, B, c, b)
    init = FlowState(rng.standard_normal(n), rng.standard_normal(m), random_spd(rng, m, 10.0))
    return prob, ustar, pstar, init


def element_loop_stiffness(mesh, sigma):
    """Weighted P1 stiffness ``sum_T |T|/sigma_T grad phi_i . grad phi_j``.

    Plain Python loop with gradients from the inverse of each element's
    barycentric coordinate matrix; independent of the package assembly.
    """
    import scipy.sparse as sp

    n = mesh.n_nodes
    K = sp.lil_matrix((n, n))
    for t, tri in enumerate(mesh.triangles):
        P = np.column_stack([np.ones(3), mesh.vertices[tri]])
        grads = np.linalg.inv(P)[1:].T            # row a: grad of phi_a
        area = 0.5 * abs(np.linalg.det(P))
        Ke = area / sigma[t] * grads @ grads.T
        for a in range(3):
            for b in range(3):
                K[tri[a], tri[b]] += Ke[a, b]
    return K.tocsr()


def smooth_sigma_fields(mesh):
    """Named per-element coefficient fields with contrast at most 100."""
    x, y = mesh.centroids[:, 0], mesh.centroids[:, 1]
    return {
        "constant": np.ones(mesh.n_triangles),
        "sine": 10.0 ** (1.0 + np.sin(np.pi * x) * np.sin(np.pi * y)),
        "ramp": 10.0 ** (1.0 + x),
        "quadratic": 10.0 ** (2.0 * x ** 2),
        "bump": 1.0 + 99.0 * np.exp(-10.0 * (x ** 2 + y ** 2)),
    }


# --- acceptance verdict lines --------------------------------------------

_VERDICTS = {}


@pytest.fixture
def criterion(request):
    """``criterion(k, ok, detail)`` records and prints one verdict line."""
    def record(k, ok, detail):
        line = f"CRITERION {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS[k] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[k])
