"""Normal-equations and augmented-system preconditioners.

P_NE = A E A' + delta I drops the columns of A whose diagonal weight is small
relative to min(mu, 1).  The augmented preconditioner is block diagonal with
the diagonal of the (1,1) block and P_NE.  An optional low-rank deflation maps
the rightmost eigenvectors of P_NE^{-1} M_NE to a fixed target value.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .krylov import KrylovReport, eigs_rightmost, lanczos_lambda_max
from .sparsela import CholeskyFactor, SymbolicCholesky, cholesky, symbolic_cholesky

__all__ = [
    "PrecondConfig",
    "NEPreconditioner",
    "NEBuilder",
    "AugPreconditioner",
    "LowRankDeflation",
    "QualityController",
    "build_E",
    "assemble_PNE",
    "apply_PAS_inv",
    "lru_setup",
    "lru_apply",
    "tune",
]


@dataclasses.dataclass(frozen=True)
class PrecondConfig:
    ce_init: float = 0.1
    nnz_budget_factor: float = 20.0
    lr_trigger_factor: float = 10.0
    p: int = 10
    nu: float = 10.0
    eig_tol: float = 0.1
    lambda_screen: float = 100.0
    screen_steps: int = 5


def build_E(theta_inv, qdiag, rho: float, mu: float, C_E: float) -> np.ndarray:
    """Diagonal of the sparsified weight matrix.

    g = 1 / (theta_inv + qdiag + rho); entries below C_E * min(mu, 1) are dropped.
    """
    g = 1.0 / (np.asarray(theta_inv, dtype=np.float64) + np.asarray(qdiag, dtype=np.float64) + rho)
    return np.where(g < C_E * min(mu, 1.0), 0.0, g)


@dataclasses.dataclass(frozen=True)
class NEPreconditioner:
    E: np.ndarray
    dropped_count: int
    P_pattern_nnz: int
    factor: CholeskyFactor
    C_E: float
    delta: float
    matrix: sp.csc_matrix

    @property
    def m(self) -> int:
        return self.factor.m

    def solve(self, r: np.ndarray) -> np.ndarray:
        return self.factor.solve(r)


def _weighted_gram(A: sp.csc_matrix, E: np.ndarray, delta: float) -> sp.csc_matrix:
    keep = np.flatnonzero(E)
    m = A.shape[0]
    P = sp.identity(m, format="csc") * delta
    if keep.size:
        Ak = A[:, keep]
        P = P + (Ak @ sp.diags(E[keep]) @ Ak.T)
    P = sp.csc_matrix(P)
    P.sort_indices()
    return P


def assemble_PNE(A, E, delta: float, symbolic: SymbolicCholesky | None = None, C_E: float = float("nan")) -> NEPreconditioner:
    """Assemble and factor A E A' + delta I, skipping the dropped columns."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    A = sp.csc_matrix(A)
    E = np.asarray(E, dtype=np.float64)
    P = _weighted_gram(A, E, delta)
    F = cholesky(P, symbolic)
    return NEPreconditioner(E, int(np.count_nonzero(E == 0.0)), int(P.nnz), F, C_E, delta, P)


class NEBuilder:
    """Assembles P_NE for a fixed A, reusing symbolic analyses between iterations.

    The symbolic factorization of A A' + I covers every dropping pattern; when
    dropping leaves a much sparser matrix, a dedicated analysis is made and
    kept until the pattern changes.
    """

    def __init__(self, A):
        self.A = sp.csc_matrix(A)
        m = self.A.shape[0]
        self._absA = abs(self.A)
        # structural pattern: products of |A| cannot cancel
        G = (self._absA @ self._absA.T + sp.identity(m)).tocsc()
        self.full_nnz = G.nnz
        self.full_symbolic = symbolic_cholesky(G)
        self._last_key: bytes | None = None
        self._last_symbolic: SymbolicCholesky | None = None

    def symbolic_for(self, E: np.ndarray, pattern: sp.csc_matrix) -> SymbolicCholesky:
        if pattern.nnz >= 0.5 * self.full_nnz:
            return self.full_symbolic
        keep = E != 0
        key = np.packbits(keep).tobytes()
        if key != self._last_key:
            Ak = self._absA[:, np.flatnonzero(keep)]
            self._last_key = key
            self._last_symbolic = symbolic_cholesky(Ak @ Ak.T)
        return self._last_symbolic

    def assemble(self, E: np.ndarray, delta: float, C_E: float = float("nan")) -> NEPreconditioner:
        P = _weighted_gram(self.A, E, delta)
        F = cholesky(P, self.symbolic_for(E, P))
        return NEPreconditioner(E, int(np.count_nonzero(E == 0.0)), int(P.nnz), F, C_E, delta, P)


@dataclasses.dataclass(frozen=True)
class LowRankDeflation:
    V: np.ndarray
    Z: np.ndarray
    Pi: np.ndarray
    nu: float
    active: bool
    ritz: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(0))
    degraded: bool = False
    lambda_max_estimate: float = float("nan")

    @classmethod
    def inactive(cls, m: int, nu: float = 10.0, lambda_max_estimate: float = float("nan")) -> "LowRankDeflation":
        e = np.zeros((m, 0))
        return cls(e, e, np.zeros((0, 0)), nu, False, lambda_max_estimate=lambda_max_estimate)

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    @classmethod
    def from_vectors(cls, M_action: Callable, V: np.ndarray, nu: float = 10.0, **extra) -> "LowRankDeflation":
        V = np.asarray(V, dtype=np.float64)
        if V.shape[1] == 0:
            return cls.inactive(V.shape[0], nu)
        Z = np.column_stack([M_action(V[:, i]) for i in range(V.shape[1])])
        T = V.T @ Z
        T = 0.5 * (T + T.T)
        Pi = scipy.linalg.lu_solve(scipy.linalg.lu_factor(T), np.eye(T.shape[0]))
        return cls(V, Z, Pi, nu, True, **extra)


def lru_setup(M_action: Callable, P: NEPreconditioner, p: int = 10, nu: float = 10.0, eig_tol: float = 0.1,
              screen_threshold: float = 100.0, screen_steps: int = 5) -> LowRankDeflation:
    """Build the low-rank update from approximate rightmost eigenvectors of (M_NE, P_NE).

    A short Lanczos run first estimates the largest eigenvalue of the
    preconditioned matrix; below ``screen_threshold`` no update is made.
    """
    m = P.m
    if p <= 0:
        return LowRankDeflation.inactive(m, nu)
    F = P.factor

    def S(w):
        return F.half_solve(M_action(F.half_solve_t(w)))

    lam = lanczos_lambda_max(S, m, screen_steps)
    if lam < screen_threshold:
        return LowRankDeflation.inactive(m, nu, lam)
    V, ritz, degraded = eigs_rightmost(M_action, F, p, eig_tol)
    return LowRankDeflation.from_vectors(M_action, V, nu, ritz=ritz, degraded=degraded, lambda_max_estimate=lam)


def lru_apply(D: LowRankDeflation, P: NEPreconditioner, r: np.ndarray) -> np.ndarray:
    """r_hat = V (nu w - u) + t with w = Pi V'r, t = P^{-1}(r - Z w), u = Pi Z't."""
    if not D.active:
        return P.solve(r)
    w = D.Pi @ (D.V.T @ r)
    z = r - D.Z @ w
    t = P.solve(z)
    u = D.Pi @ (D.Z.T @ t)
    return D.V @ (D.nu * w - u) + t


@dataclasses.dataclass(frozen=True)
class AugPreconditioner:
    diag_block: np.ndarray
    ne_part: NEPreconditioner
    deflation: LowRankDeflation | None = None

    def __post_init__(self):
        if not np.all(self.diag_block > 0):
            raise ValueError("diagonal block must be positive")

    @property
    def n(self) -> int:
        return self.diag_block.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return apply_PAS_inv(self, v)


def apply_PAS_inv(P: AugPreconditioner, v: np.ndarray) -> np.ndarray:
    n = P.n
    out = np.empty_like(v, dtype=np.float64)
    out[:n] = v[:n] / P.diag_block
    if P.deflation is not None and P.deflation.active:
        out[n:] = lru_apply(P.deflation, P.ne_part, v[n:])
    else:
        out[n:] = P.ne_part.solve(v[n:])
    return out


@dataclasses.dataclass
class QualityController:
    """Adjusts the dropping constant from the outcome of the last Krylov solve."""

    C_E: float
    nnz_budget: float
    lr_trigger_nnz: float
    last_iterations: int = 0
    last_maxit: int = 0
    lr_triggered: bool = False

    @classmethod
    def for_matrix(cls, A, config: PrecondConfig = PrecondConfig()) -> "QualityController":
        nnz = sp.csc_matrix(A).nnz
        return cls(config.ce_init, config.nnz_budget_factor * nnz, config.lr_trigger_factor * nnz)

    def sharpen(self) -> float:
        self.C_E *= 0.1
        return self.C_E


def tune(ctrl: QualityController, report: KrylovReport, P: NEPreconditioner, maxit: int) -> tuple[float, bool]:
    """Update C_E in place and return (C_E, low-rank trigger).

    Slow solves (>= 90% of maxit or not converged) refine the preconditioner,
    by x0.1, or only x0.5 when P_NE already exceeds the memory budget; fast
    solves (< 30% of maxit) with P_NE over budget coarsen it by x10.
    """
    it = report.iterations
    ctrl.last_iterations = it
    ctrl.last_maxit = maxit
    slow = it >= 0.9 * maxit or not report.converged
    heavy = P.P_pattern_nnz > ctrl.nnz_budget
    if slow:
        ctrl.C_E *= 0.5 if heavy else 0.1
    elif it < 0.3 * maxit and heavy:
        ctrl.C_E *= 10.0
    ctrl.lr_triggered = slow and P.P_pattern_nnz > ctrl.lr_trigger_nnz
    return ctrl.C_E, ctrl.lr_triggered
