"""Independent dense oracles and instance builders shared by the test modules."""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from ipk import ippmm
from ipk.krylov import inner_tolerance
from ipk.precond import NEBuilder, build_E
from ipk.qpio import QPProblem

DATA = __import__("pathlib").Path(__file__).parent / "data"
NETLIB = DATA / "netlib"

# optima computed once with scipy.optimize.linprog (HiGHS) on the same MPS files
REFERENCE_OPTIMA = {
    "afiro": -464.75314286,
    "adlittle": 225494.96316,
    "sc50a": -64.575077059,
    "sc50b": -70.0,
    "share2b": -415.73224074,
    "blend": -30.812149846,
    "stocfor1": -41131.976219,
    "scagr7": -2331389.2548,
    "israel": -896644.82186,
    "beaconfd": 33592.485807,
}


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))


def random_qp(seed: int, m: int = 8, n: int = 20, q: str = "none", free: int = 0, density: float = 0.4) -> QPProblem:
    """Feasible, bounded random LP/QP: b = A x0 with x0 > 0 and c = A'y0 + z0 with z0 > 0."""
    rng = np.random.default_rng(seed)
    A = sp.random(m, n, density=density, random_state=rng, data_rvs=rng.standard_normal).tolil()
    for i in range(m):
        A[i, i % n] = 1.0 + rng.random()
    A = A.tocsc()
    nonneg = np.ones(n, dtype=bool)
    if free:
        nonneg[n - free:] = False
    x0 = np.where(nonneg, rng.uniform(0.5, 2.0, n), rng.standard_normal(n))
    z0 = np.where(nonneg, rng.uniform(0.5, 2.0, n), 0.0)
    if q == "none":
        Q = sp.csc_matrix((n, n))
    elif q == "diag":
        Q = sp.diags(rng.uniform(0.1, 2.0, n)).tocsc()
    else:
        B = sp.random(n, n, density=0.1, random_state=rng).toarray()
        Q = sp.csc_matrix(B @ B.T + 0.1 * np.eye(n))
    y0 = rng.standard_normal(m)
    c = A.T @ y0 + z0 - Q @ x0
    return QPProblem(Q=Q, A=A, b=A @ x0, c=c, nonneg=nonneg, name=f"random{seed}")


def dense_newton(prob: QPProblem, it: ippmm.Iterate, st: ippmm.PMMState, r1, r2):
    """Direct dense solve of the regularized augmented system."""
    n, m = prob.n, prob.m
    H = prob.Q.toarray() + np.diag(it.theta_inv + st.rho)
    A = prob.A.toarray()
    K = np.block([[-H, A.T], [A, st.delta * np.eye(m)]])
    sol = scipy.linalg.solve(K, np.concatenate([r1, r2]))
    return sol[:n], sol[n:]


def trajectory(prob: QPProblem, mode: str, iterations: int, ce_init: float = 0.1, tol: float = 1e-4):
    """Yield (prob, it, st, system, step) along the solver's own path.

    Stops after ``iterations`` steps or once the iterate passes the
    termination test at ``tol``, as the driver would.
    """
    prob = ippmm.preprocess(prob)
    it, st = ippmm.starting_point(prob)
    builder = NEBuilder(prob.A)
    qdiag = prob.Q.diagonal()
    for k in range(iterations):
        if ippmm.check_termination(prob, it, st, tol, k, iterations) is not None:
            return
        mu = it.mu
        E = build_E(it.theta_inv, qdiag, st.rho, mu, ce_init)
        pre = builder.assemble(E, st.delta, ce_init)
        system = ippmm.KKTSystem(prob, it, st, mode, pre, None, inner_tolerance(mu))
        step = ippmm.predictor_corrector(prob, it, st, system)
        yield prob, it, st, system, step
        st = ippmm.penalty_estimate_update(prob, it, step.iterate, st)
        it = step.iterate


def direction_errors(prob, it, st, step) -> tuple[float, float]:
    """Relative errors of the predictor and corrector directions against dense solves.

    The corrector right-hand side is rebuilt from the iterative predictor, so
    each comparison isolates one linear solve.
    """
    I = it.nonneg
    rd, rp = ippmm.newton_rhs(prob, it, st)
    d1 = np.zeros(prob.n)
    d1[I] = -it.z[I]
    px, py = dense_newton(prob, it, st, rd - d1, rp)
    dxp, dyp, dzp = step.predictor
    e_pred = np.linalg.norm(np.concatenate([dxp - px, dyp - py])) / np.linalg.norm(np.concatenate([px, py]))
    d2 = np.zeros(prob.n)
    d2[I] = (step.mu_target - dxp[I] * dzp[I]) / it.x[I]
    cx, cy = dense_newton(prob, it, st, -d2, np.zeros(prob.m))
    dxc, dyc = step.dx - dxp, step.dy - dyp
    e_corr = np.linalg.norm(np.concatenate([dxc - cx, dyc - cy])) / np.linalg.norm(np.concatenate([cx, cy]))
    return float(e_pred), float(e_corr)


def outlier_instance(seed: int = 0, m: int = 120, n: int = 300, k: int = 12):
    """Normal-equations data whose P_NE-preconditioned spectrum has k large outliers.

    The first k rows are touched only by k columns whose weights fall just
    under the dropping threshold, so P_NE is ~delta*I there while M_NE is not.
    Returns (A, theta_inv, mu, delta, rho, C_E).
    """
    rng = np.random.default_rng(seed)
    mu, delta, rho, C_E = 1e-2, 1e-6, 1e-6, 0.1
    thr = C_E * mu
    A = sp.random(m, n, density=0.04, random_state=rng, data_rvs=rng.standard_normal).tolil()
    g = 10.0 ** rng.uniform(np.log10(thr), 1, n)
    A[:k, :] = 0
    for j in range(k):
        A[j, j] = 1.0 + rng.random()
        A[(j + 1) % k, j] = 0.5 * rng.standard_normal()
        g[j] = thr * 10.0 ** rng.uniform(-1.5, -0.1)
    low = rng.choice(np.arange(k, n), n // 4, replace=False)
    g[low] = thr * 10.0 ** rng.uniform(-6, -1, low.size)
    return A.tocsc(), 1.0 / g - rho, mu, delta, rho, C_E
