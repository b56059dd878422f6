"""Preconditioned CG and MINRES, plus Lanczos eigenvalue estimators."""

from __future__ import annotations

import dataclasses
import enum
from typing import Callable

import numpy as np
import scipy.linalg

__all__ = [
    "LinearOperator",
    "KrylovStatus",
    "KrylovReport",
    "cg",
    "minres",
    "lanczos_lambda_max",
    "eigs_rightmost",
    "inner_tolerance",
]

Vec = np.ndarray
_EPS = np.finfo(float).eps


@dataclasses.dataclass(frozen=True)
class LinearOperator:
    """Matrix-free symmetric operator."""

    dim: int
    apply: Callable[[Vec], Vec]
    is_symmetric: bool = True

    def __call__(self, v: Vec) -> Vec:
        return self.apply(v)

    @classmethod
    def from_matrix(cls, M) -> "LinearOperator":
        return cls(M.shape[0], lambda v: M @ v)


class KrylovStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    BREAKDOWN = "breakdown"


@dataclasses.dataclass
class KrylovReport:
    iterations: int
    residual: float
    status: KrylovStatus
    x: Vec
    history: list[float] = dataclasses.field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is KrylovStatus.CONVERGED


def inner_tolerance(mu: float) -> float:
    """Krylov tolerance tied to the barrier parameter."""
    return max(1e-10, min(1e-2, 1e-2 * mu))


def _as_op(M) -> Callable[[Vec], Vec]:
    if callable(M):
        return M
    return lambda v: M @ v


def _identity(v: Vec) -> Vec:
    return v.copy()


def cg(M, apply_precond_inverse, rhs: Vec, tol: float = 1e-8, maxit: int = 100, x0: Vec | None = None) -> KrylovReport:
    """Preconditioned conjugate gradients.

    Stops when ||r||_{P^-1} / ||r0||_{P^-1} <= tol.  A non-positive curvature
    p'Mp (or r'P^{-1}r < 0) ends the run with status BREAKDOWN.
    """
    A = _as_op(M)
    prec = apply_precond_inverse or _identity
    b = np.asarray(rhs, dtype=np.float64)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A(x) if x0 is not None else b.copy()
    z = prec(r)
    rz = float(r @ z)
    if rz < 0:
        return KrylovReport(0, np.nan, KrylovStatus.BREAKDOWN, x)
    norm0 = np.sqrt(rz)
    if norm0 == 0.0:
        return KrylovReport(0, 0.0, KrylovStatus.CONVERGED, x, [0.0])
    history = [1.0]
    p = z.copy()
    for it in range(1, maxit + 1):
        q = A(p)
        pq = float(p @ q)
        if not pq > 0.0:
            return KrylovReport(it - 1, history[-1], KrylovStatus.BREAKDOWN, x, history)
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        z = prec(r)
        rz_new = float(r @ z)
        if rz_new < 0:
            return KrylovReport(it, history[-1], KrylovStatus.BREAKDOWN, x, history)
        rel = np.sqrt(rz_new) / norm0
        history.append(rel)
        if rel <= tol:
            return KrylovReport(it, rel, KrylovStatus.CONVERGED, x, history)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return KrylovReport(maxit, history[-1], KrylovStatus.MAX_ITERATIONS, x, history)


def minres(M, apply_precond_inverse, rhs: Vec, tol: float = 1e-8, maxit: int = 300) -> KrylovReport:
    """Preconditioned MINRES (Paige-Saunders) for symmetric, possibly indefinite M.

    The preconditioner must be SPD; a negative r'P^{-1}r raises ValueError.
    Convergence is measured on ||r||_{P^-1} / ||b||_{P^-1}.
    """
    A = _as_op(M)
    prec = apply_precond_inverse or _identity
    b = np.asarray(rhs, dtype=np.float64)
    n = b.shape[0]
    x = np.zeros(n)
    r1 = b.copy()
    y = prec(r1)
    beta1 = float(r1 @ y)
    if beta1 < 0:
        raise ValueError("preconditioner is not positive definite")
    if beta1 == 0.0:
        return KrylovReport(0, 0.0, KrylovStatus.CONVERGED, x, [0.0])
    beta1 = np.sqrt(beta1)
    oldb, beta, dbar, epsln = 0.0, beta1, 0.0, 0.0
    phibar = beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    history = [1.0]
    for it in range(1, maxit + 1):
        v = y / beta
        y = A(v)
        if it >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = prec(r2)
        oldb = beta
        beta2 = float(r2 @ y)
        if beta2 < 0:
            raise ValueError("preconditioner is not positive definite")
        beta = np.sqrt(beta2)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), _EPS)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        rel = phibar / beta1
        history.append(rel)
        if rel <= tol or beta == 0.0:
            return KrylovReport(it, rel, KrylovStatus.CONVERGED, x, history)
    return KrylovReport(maxit, history[-1], KrylovStatus.MAX_ITERATIONS, x, history)


def lanczos_lambda_max(apply_precond_op, dim: int, k: int = 5) -> float:
    """Largest Ritz value after k Lanczos steps from the normalized all-ones vector.

    ``apply_precond_op`` must be symmetric (e.g. L^{-1} M L^{-T}).  The result
    never exceeds the true largest eigenvalue.
    """
    if k < 1:
        raise ValueError("k must be positive")
    k = min(k, dim)
    q = np.ones(dim) / np.sqrt(dim)
    Qb = np.zeros((dim, k))
    alphas, betas = [], []
    for j in range(k):
        Qb[:, j] = q
        w = apply_precond_op(q)
        a = float(q @ w)
        alphas.append(a)
        w = w - Qb[:, : j + 1] @ (Qb[:, : j + 1].T @ w)
        w = w - Qb[:, : j + 1] @ (Qb[:, : j + 1].T @ w)
        bnorm = np.linalg.norm(w)
        if j == k - 1 or bnorm <= 1e-12 * max(abs(a), 1.0):
            break
        betas.append(bnorm)
        q = w / bnorm
    T = np.diag(alphas)
    if betas:
        idx = np.arange(len(betas))
        T[idx, idx + 1] = betas
        T[idx + 1, idx] = betas
    return float(scipy.linalg.eigvalsh(T)[-1])


def eigs_rightmost(M_action, P_factor, p: int, tol: float = 0.1, basis: int | None = None,
                   max_restarts: int = 30, seed: int = 0):
    """p rightmost eigenpairs of M v = lam P v by thick-restart Lanczos.

    Works on the symmetric operator L^{-1} M L^{-T} built from the Cholesky
    factor of P, so returned columns of V are P-orthonormal.  Returns
    ``(V, ritz, degraded)`` with Ritz values in decreasing order; ``degraded``
    is set when the restart budget ran out before every pair met
    ||S y - theta y|| <= tol * |theta|.
    """
    m = P_factor.m
    if p <= 0:
        return np.zeros((m, 0)), np.zeros(0), False
    p = min(p, m)
    kmax = min(m, basis or max(3 * p, p + 2))

    def S(w):
        return P_factor.half_solve(M_action(P_factor.half_solve_t(w)))

    rng = np.random.default_rng(seed)
    W = np.zeros((m, kmax + 1))
    H = np.zeros((kmax + 1, kmax + 1))
    W[:, 0] = np.ones(m) / np.sqrt(m)
    nkeep = 0
    degraded = True
    theta = np.zeros(0)
    Y = np.zeros((0, 0))
    for restart in range(max_restarts + 1):
        j = nkeep
        while j < kmax:
            w = S(W[:, j])
            h = W[:, : j + 1].T @ w
            w = w - W[:, : j + 1] @ h
            h2 = W[:, : j + 1].T @ w
            w = w - W[:, : j + 1] @ h2
            h = h + h2
            H[: j + 1, j] = h
            H[j, : j + 1] = h
            bnorm = np.linalg.norm(w)
            j += 1
            if bnorm <= 1e-12 * max(1.0, np.abs(h).max()):
                # invariant subspace: continue with a fresh orthogonal direction
                if j >= m:
                    break
                for _ in range(3):
                    w = rng.standard_normal(m)
                    w -= W[:, :j] @ (W[:, :j].T @ w)
                    w -= W[:, :j] @ (W[:, :j].T @ w)
                    nw = np.linalg.norm(w)
                    if nw > 1e-8:
                        break
                W[:, j] = w / nw
                H[j - 1, j] = H[j, j - 1] = 0.0
                continue
            W[:, j] = w / bnorm
            H[j - 1, j] = H[j, j - 1] = bnorm
        k = j
        Hk = 0.5 * (H[:k, :k] + H[:k, :k].T)
        theta, Y = scipy.linalg.eigh(Hk)
        theta, Y = theta[::-1], Y[:, ::-1]
        # Lanczos relation: the residual of Ritz pair i is |beta_k * Y[k-1, i]|
        resid = np.abs(Y.T @ H[:k, k])
        ok = resid[:p] <= tol * np.maximum(np.abs(theta[:p]), _EPS)
        if np.all(ok) or k >= m:
            degraded = False
            break
        if restart == max_restarts:
            break
        # thick restart: keep leading Ritz vectors, expand from the residual direction
        nkeep = min(k - 1, p + (kmax - p) // 2)
        Wk = W[:, :k] @ Y[:, :nkeep]
        s = Y[:, :nkeep].T @ H[:k, k]
        r = W[:, k].copy()
        W[:] = 0.0
        H[:] = 0.0
        W[:, :nkeep] = Wk
        W[:, nkeep] = r
        H[:nkeep, :nkeep] = np.diag(theta[:nkeep])
        H[:nkeep, nkeep] = s
        H[nkeep, :nkeep] = s
    Wp = W[:, : len(theta)] @ Y[:, :p]
    V = np.column_stack([P_factor.half_solve_t(Wp[:, i]) for i in range(p)])
    return V, theta[:p].copy(), degraded
