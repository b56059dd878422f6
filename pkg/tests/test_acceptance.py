"""Acceptance criteria 1-9, each at its stated tolerance."""

import time

import numpy as np

from ipk import ippmm, qpio, spectra
from ipk.ippmm import Status
from ipk.krylov import cg
from ipk.precond import assemble_PNE, build_E, lru_apply, lru_setup
from ipk.sparsela import dense_sym_eig

from oracles import DATA, NETLIB, REFERENCE_OPTIMA, direction_errors, outlier_instance, random_qp, rel_err, trajectory

NETLIB_SET = ["afiro", "adlittle", "sc50a", "sc50b", "share2b", "blend", "stocfor1", "scagr7", "israel", "beaconfd"]


def test_criterion_1_theorem1_sweep(criterion):
    t0 = time.perf_counter()
    s = spectra.sweep(1, seeds=100)
    elapsed = time.perf_counter() - t0
    ok = s["instances"] == 400 and not s["violations"] and elapsed < 120
    criterion(1, ok, f"{s['instances']} instances, {len(s['violations'])} violations, "
                     f"min upper margin {s['margins']['min_upper_margin']:.3g}, {elapsed:.1f}s")
    assert s["instances"] == 400
    assert s["violations"] == []
    assert elapsed < 120


def test_criterion_2_theorem2_deflation(criterion):
    s = spectra.sweep(2, seeds=50, cycle_mus=True)
    err = s["margins"]["max_rel_error"]
    ok = s["instances"] == 50 and not s["violations"] and err <= 1e-7
    criterion(2, ok, f"{s['instances']} instances, max relative eigenvalue error {err:.2e}")
    assert s["instances"] == 50 and s["violations"] == [] and err <= 1e-7


def test_criterion_3_theorem3_sweep(criterion):
    s = spectra.sweep(3, seeds=100, cycle_mus=True)
    ok = s["instances"] == 100 and not s["violations"]
    criterion(3, ok, f"{s['instances']} instances with dense Q, {len(s['violations'])} violations")
    assert s["instances"] == 100 and s["violations"] == []


def _direction_instance(seed):
    m = 10 + (seed % 5) * 5
    n = 30 + (seed % 4) * 20
    q = ["none", "diag", "full"][seed % 3]
    mode = "minres" if q == "full" else ["cg", "minres"][seed % 2]
    return random_qp(seed, m, n, q, free=seed % 4), mode


def test_criterion_4_direction_equivalence(criterion):
    worst, where, checked = 0.0, None, 0
    for seed in range(20):
        p, mode = _direction_instance(seed)
        assert p.n + p.m <= 200
        for prob, it, st, system, step in trajectory(p, mode, 200):
            e_pred, e_corr = direction_errors(prob, it, st, step)
            ratio = max(e_pred, e_corr) / system.tol_inner
            checked += 1
            if ratio > worst:
                worst, where = ratio, (seed, mode, "predictor" if e_pred >= e_corr else "corrector")
    ok = worst <= 50
    criterion(4, ok, f"{checked} directions on 20 instances, worst error {worst:.1f} x tol_inner "
                     f"(seed {where[0]}, {where[1]}, {where[2]}); bar 50")
    assert worst <= 50


def _solve_set(tol):
    rows = []
    for name in NETLIB_SET:
        r = ippmm.solve(qpio.read_problem(NETLIB / f"{name}.mps"), tol=tol)
        rows.append((name, r.status, rel_err(r.objective, REFERENCE_OPTIMA[name])))
    return rows


def _report_set(criterion, number, tol, rows, elapsed, budget=None):
    solved = sum(s is Status.OPTIMAL for _, s, _ in rows)
    bad = [f"{n} ({s.value}, rel err {e:.2e})" for n, s, e in rows if s is not Status.OPTIMAL or e > 1e-4]
    ok = not bad and (budget is None or elapsed < budget)
    detail = f"tol {tol:g}: solved {100 * solved / len(rows):.0f}%, {elapsed:.1f}s"
    if bad:
        detail += "; off: " + ", ".join(bad)
    criterion(number, ok, detail)
    return bad


def test_criterion_5_netlib(criterion):
    t0 = time.perf_counter()
    rows = _solve_set(1e-4)
    elapsed = time.perf_counter() - t0
    bad = _report_set(criterion, 5, 1e-4, rows, elapsed, 60)
    assert bad == []
    assert elapsed < 60


def test_criterion_6_mode_consistency(criterion):
    diffs, it_cg, it_mr = [], 0, 0
    for seed in range(6):
        p = random_qp(100 + seed, 30, 80, "diag", free=seed % 3)
        a = ippmm.solve(p, mode="cg", tol=1e-8)
        b = ippmm.solve(p, mode="minres", tol=1e-8)
        assert a.status is Status.OPTIMAL and b.status is Status.OPTIMAL
        diffs.append(rel_err(a.objective, b.objective))
        it_cg += a.krylov_iterations
        it_mr += b.krylov_iterations
    ok = max(diffs) <= 1e-6 and it_mr > it_cg
    criterion(6, ok, f"max objective difference {max(diffs):.2e}, Krylov totals CG {it_cg} vs MINRES {it_mr}")
    assert max(diffs) <= 1e-6
    assert it_mr > it_cg


def test_criterion_7_low_rank_update(criterion):
    details, checks = [], []
    for seed in range(3):
        A, tinv, mu, delta, rho, C_E = outlier_instance(seed)
        E = build_E(tinv, np.zeros(A.shape[1]), rho, mu, C_E)
        P = assemble_PNE(A, E, delta)
        G = 1 / (tinv + rho)
        Md = (A.toarray() * G) @ A.toarray().T + delta * np.eye(A.shape[0])
        outliers = int(np.count_nonzero(dense_sym_eig(Md, P.matrix.toarray()) > 100))

        def M(v):
            return A @ (G * (A.T @ v)) + delta * v

        b = np.random.default_rng(seed).standard_normal(A.shape[0])
        base = cg(M, P.solve, b, tol=1e-8, maxit=1000)
        D = lru_setup(M, P, p=10, nu=10.0, eig_tol=0.1)
        defl = cg(M, lambda r: lru_apply(D, P, r), b, tol=1e-8, maxit=1000)
        reduction = 1 - defl.iterations / base.iterations
        checks.append((outliers, base.converged and defl.converged, reduction))
        details.append(f"seed {seed}: {outliers} outliers, {base.iterations} -> {defl.iterations}")
    ok = all(o >= 5 and c and r >= 0.10 for o, c, r in checks)
    criterion(7, ok, "; ".join(details))
    for outliers, converged, reduction in checks:
        assert outliers >= 5
        assert converged
        assert reduction >= 0.10


def test_criterion_8_infeasibility(criterion):
    r = ippmm.solve(qpio.read_problem(DATA / "infeas.mps"))
    ok = r.status in (Status.PRIMAL_INFEASIBLE, Status.DUAL_INFEASIBLE) and r.ip_iterations < 200
    criterion(8, ok, f"status {r.status.value} after {r.ip_iterations} iterations")
    assert r.status is Status.PRIMAL_INFEASIBLE
    assert r.ip_iterations < 200


def test_criterion_9_tight_tolerance(criterion):
    t0 = time.perf_counter()
    rows = _solve_set(1e-6)
    bad = _report_set(criterion, 9, 1e-6, rows, time.perf_counter() - t0)
    assert bad == []
