"""Inexact interior point-proximal method of multipliers (IP-PMM).

Solves  min c'x + 1/2 x'Qx  s.t.  Ax = b,  x_I >= 0,  x_F free.

Each iteration takes a Mehrotra predictor-corrector step on the regularized
Newton system

    [ -(Q + Theta^{-1} + rho I)   A' ] [dx]   [r1]
    [  A                     delta I ] [dy] = [r2]

solved either through the normal equations with PCG (Q zero or diagonal) or
directly with MINRES and a block diagonal preconditioner.  The proximal
estimates (eta, zeta) and penalties (delta, rho) follow the progress of the
barrier parameter.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import time
from typing import Any

import numpy as np
import scipy.sparse as sp

from . import qpio
from .krylov import KrylovReport, KrylovStatus, LinearOperator, cg, inner_tolerance, minres
from .precond import (
    AugPreconditioner,
    LowRankDeflation,
    NEBuilder,
    NEPreconditioner,
    PrecondConfig,
    QualityController,
    build_E,
    lru_apply,
    lru_setup,
    tune,
)
from .qpio import QPProblem
from .sparsela import IndefiniteMatrixError

__all__ = [
    "Config",
    "Status",
    "Iterate",
    "PMMState",
    "SolveResult",
    "KKTSystem",
    "StepResult",
    "DirectionRejected",
    "KrylovBreakdown",
    "least_squares_start",
    "starting_point",
    "assemble_augmented",
    "assemble_normal_eq",
    "predictor_corrector",
    "penalty_estimate_update",
    "check_termination",
    "handle_instability",
    "regularization_threshold",
    "step_length",
    "mehrotra_target",
    "solve",
]

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal_infeasible_detected"
    DUAL_INFEASIBLE = "dual_infeasible_detected"
    ILL_CONDITIONED = "ill_conditioned"
    ITERATION_LIMIT = "iteration_limit"
    KRYLOV_FAILURE = "krylov_failure"


@dataclasses.dataclass
class Config:
    tol: float = 1e-4
    max_iter: int = 200
    mode: str = "auto"  # auto | cg | minres
    maxit_cg: int = 100
    maxit_minres: int = 300
    tau: float = 0.995
    lr: str = "auto"  # on | off | auto
    precond: PrecondConfig = dataclasses.field(default_factory=PrecondConfig)
    scale: bool = True
    max_rejections: int = 10
    max_thr_raises: int = 10
    infeasibility_window: int = 5

    def __post_init__(self):
        if self.mode not in ("auto", "cg", "minres"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lr not in ("auto", "on", "off"):
            raise ValueError(f"unknown low-rank setting {self.lr!r}")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Config":
        """Build from a flat mapping; precond keys may be given at top level."""
        d = dict(d)
        pre_fields = {f.name for f in dataclasses.fields(PrecondConfig)}
        pre = {k: d.pop(k) for k in list(d) if k in pre_fields}
        pre.update(d.pop("precond", {}) or {})
        own = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - own
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(precond=PrecondConfig(**pre), **d)


@dataclasses.dataclass
class Iterate:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    nonneg: np.ndarray

    @property
    def mu(self) -> float:
        nI = int(self.nonneg.sum())
        if nI == 0:
            return 0.0
        return float(self.x[self.nonneg] @ self.z[self.nonneg]) / nI

    @property
    def theta_inv(self) -> np.ndarray:
        t = np.zeros_like(self.x)
        t[self.nonneg] = self.z[self.nonneg] / self.x[self.nonneg]
        return t

    def copy(self) -> "Iterate":
        return Iterate(self.x.copy(), self.y.copy(), self.z.copy(), self.nonneg)


@dataclasses.dataclass
class PMMState:
    eta: np.ndarray
    zeta: np.ndarray
    delta: float = 8.0
    rho: float = 8.0
    reg_thr: float = 1e-13
    eta_stall: int = 0
    zeta_stall: int = 0
    thr_raises: int = 0

    def copy(self) -> "PMMState":
        return dataclasses.replace(self, eta=self.eta.copy(), zeta=self.zeta.copy())


# ---------------------------------------------------------------------------
# residuals


def primal_residual(prob: QPProblem, x: np.ndarray) -> np.ndarray:
    return prob.b - prob.A @ x


def dual_residual(prob: QPProblem, it: Iterate) -> np.ndarray:
    """c + Qx - A'y - z."""
    return prob.c + prob.Q @ it.x - prob.A.T @ it.y - it.z


def regularization_threshold(prob: QPProblem, tol: float) -> float:
    def inf_norm(M):
        return float(abs(M).sum(axis=1).max()) if M.nnz else 0.0

    scale = max(inf_norm(prob.A) ** 2, inf_norm(prob.Q) ** 2)
    if scale == 0.0:
        return max(tol, 1e-13)
    return max(tol / scale, 1e-13)


# ---------------------------------------------------------------------------
# starting point


def _jacobi_cg_normal(A: sp.csc_matrix, rhs: np.ndarray, delta: float, tol: float, maxit: int) -> KrylovReport:
    """Solve (A A' + delta I) w = rhs matrix-free with a Jacobi preconditioner."""
    diag = np.asarray(A.multiply(A).sum(axis=1)).ravel() + delta
    diag[diag <= 0] = 1.0
    AT = A.T.tocsr()

    def op(v):
        return A @ (AT @ v) + delta * v

    return cg(op, lambda r: r / diag, rhs, tol=tol, maxit=maxit)


def least_squares_start(prob: QPProblem, delta: float = 8.0, tol: float = 1e-8, maxit: int = 200):
    """x~ = A'(AA' + delta I)^{-1} b, y~ = (AA' + delta I)^{-1} A(c + Qx~), z~ = c - A'y~ + Qx~.

    Returns ``(x, y, z, ok)``; z is zero on free variables and ``ok`` is false
    if either CG run broke down.
    """
    A = prob.A
    if prob.m == 0:
        x = np.zeros(prob.n)
        y = np.zeros(0)
        ok = True
    else:
        r1 = _jacobi_cg_normal(A, prob.b, delta, tol, maxit)
        x = A.T @ r1.x
        r2 = _jacobi_cg_normal(A, A @ (prob.c + prob.Q @ x), delta, tol, maxit)
        y = r2.x
        ok = r1.status is not KrylovStatus.BREAKDOWN and r2.status is not KrylovStatus.BREAKDOWN
    z = prob.c - A.T @ y + prob.Q @ x
    z[~prob.nonneg] = 0.0
    return x, y, z, ok


def _mehrotra_shift(x: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dx = max(-1.5 * x.min(), 0.0)
    dz = max(-1.5 * z.min(), 0.0)
    xh, zh = x + dx, z + dz
    xz = float(xh @ zh)
    if xz <= 0 or zh.sum() <= 0 or xh.sum() <= 0:
        # second-stage ratios undefined: lift both sides by one first
        dx += 1.0
        dz += 1.0
        xh, zh = x + dx, z + dz
        xz = float(xh @ zh)
    dx += 0.5 * xz / zh.sum()
    dz += 0.5 * xz / xh.sum()
    return x + dx, z + dz


def starting_point(prob: QPProblem, delta: float = 8.0, rho: float = 8.0, tol: float = 1e-4,
                   cg_tol: float = 1e-8, cg_maxit: int = 200) -> tuple[Iterate, PMMState]:
    I = prob.nonneg
    x, y, z, ok = least_squares_start(prob, delta, cg_tol, cg_maxit)
    if not ok or not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(z))):
        log.warning("starting point CG broke down; using the unit point")
        x = np.where(I, 1.0, 0.0)
        z = np.where(I, 1.0, 0.0)
        y = np.zeros(prob.m)
    elif I.any():
        x[I], z[I] = _mehrotra_shift(x[I], z[I])
    it = Iterate(x, y, z, I)
    st = PMMState(eta=y.copy(), zeta=x.copy(), delta=delta, rho=rho,
                  reg_thr=regularization_threshold(prob, tol))
    return it, st


# ---------------------------------------------------------------------------
# Newton system


def _diag_weights(prob: QPProblem, it: Iterate, st: PMMState) -> np.ndarray:
    """Diagonal of Q + Theta^{-1} + rho I using only the diagonal of Q."""
    return prob.Q.diagonal() + it.theta_inv + st.rho


def assemble_augmented(prob: QPProblem, it: Iterate, st: PMMState) -> LinearOperator:
    n = prob.n
    A, Q = prob.A, prob.Q
    d = it.theta_inv + st.rho
    delta = st.delta

    def apply(v):
        v1, v2 = v[:n], v[n:]
        out = np.empty_like(v, dtype=np.float64)
        out[:n] = -(Q @ v1 + d * v1) + A.T @ v2
        out[n:] = A @ v1 + delta * v2
        return out

    return LinearOperator(n + prob.m, apply)


def assemble_normal_eq(prob: QPProblem, it: Iterate, st: PMMState) -> LinearOperator:
    if not prob.q_is_diagonal():
        raise ValueError("normal equations require a zero or diagonal Q")
    G = 1.0 / _diag_weights(prob, it, st)
    A = prob.A
    delta = st.delta
    return LinearOperator(prob.m, lambda v: A @ (G * (A.T @ v)) + delta * v)


class DirectionRejected(RuntimeError):
    """The Krylov solve stopped early with an unacceptable residual."""


class KrylovBreakdown(RuntimeError):
    """CG met non-positive curvature or MINRES a non-SPD preconditioner."""


def _combine(a: KrylovReport, b: KrylovReport | None) -> KrylovReport:
    if b is None:
        return a
    status = KrylovStatus.CONVERGED if a.converged and b.converged else KrylovStatus.MAX_ITERATIONS
    worst = a if a.iterations >= b.iterations else b
    return KrylovReport(worst.iterations, max(a.residual, b.residual), status, worst.x)


class KKTSystem:
    """Newton system of one IP-PMM iteration together with its preconditioner."""

    def __init__(self, prob: QPProblem, it: Iterate, st: PMMState, mode: str, pre: NEPreconditioner,
                 deflation: LowRankDeflation | None = None, tol_inner: float = 1e-8,
                 maxit_cg: int = 100, maxit_minres: int = 300):
        if mode not in ("cg", "minres"):
            raise ValueError(f"mode must be 'cg' or 'minres', got {mode!r}")
        self.prob, self.it, self.st = prob, it, st
        self.mode = mode
        self.pre = pre
        self.deflation = deflation
        self.tol_inner = tol_inner
        self.maxit = maxit_cg if mode == "cg" else maxit_minres
        self.weights = _diag_weights(prob, it, st)
        if mode == "cg":
            self.op = assemble_normal_eq(prob, it, st)
        else:
            self.op = assemble_augmented(prob, it, st)
            self.aug_pre = AugPreconditioner(self.weights, pre, deflation)

    def precondition(self, r: np.ndarray) -> np.ndarray:
        if self.mode == "cg":
            if self.deflation is not None:
                return lru_apply(self.deflation, self.pre, r)
            return self.pre.solve(r)
        return self.aug_pre.apply(r)

    def solve(self, r1: np.ndarray, r2: np.ndarray) -> tuple[np.ndarray, np.ndarray, KrylovReport]:
        A = self.prob.A
        n = self.prob.n
        if self.mode == "cg":
            G = 1.0 / self.weights
            rhs = r2 + A @ (G * r1)
            rep = cg(self.op, self.precondition, rhs, tol=self.tol_inner, maxit=self.maxit)
            if rep.status is KrylovStatus.BREAKDOWN:
                raise KrylovBreakdown("CG breakdown")
            self._check(rep, rhs)
            dy = rep.x
            dx = G * (A.T @ dy - r1)
        else:
            rhs = np.concatenate([r1, r2])
            try:
                rep = minres(self.op, self.precondition, rhs, tol=self.tol_inner, maxit=self.maxit)
            except ValueError as exc:
                raise KrylovBreakdown(str(exc)) from exc
            self._check(rep, rhs)
            dx, dy = rep.x[:n], rep.x[n:]
        return dx, dy, rep

    def _check(self, rep: KrylovReport, rhs: np.ndarray) -> None:
        if rep.converged:
            return
        nb = np.linalg.norm(rhs)
        res = np.linalg.norm(rhs - self.op(rep.x)) / nb if nb > 0 else 0.0
        if not res <= 10.0 * self.tol_inner:
            raise DirectionRejected(f"relative residual {res:.2e} after {rep.iterations} iterations")


# ---------------------------------------------------------------------------
# predictor-corrector


def step_length(v: np.ndarray, dv: np.ndarray, tau: float = 0.995) -> float:
    """tau * min(1, largest alpha with v + alpha dv >= 0)."""
    neg = dv < 0
    amax = float(np.min(-v[neg] / dv[neg])) if neg.any() else 1.0
    return tau * min(1.0, amax)


def mehrotra_target(x: np.ndarray, z: np.ndarray, dx: np.ndarray, dz: np.ndarray, ax: float, az: float) -> float:
    g = float((x + ax * dx) @ (z + az * dz))
    return (g / float(x @ z)) ** 2 * g / x.size


@dataclasses.dataclass
class StepResult:
    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray
    iterate: Iterate
    alpha_x: float
    alpha_z: float
    report_pred: KrylovReport
    report_corr: KrylovReport | None
    predictor: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    mu_target: float = 0.0

    @property
    def report(self) -> KrylovReport:
        return _combine(self.report_pred, self.report_corr)


def newton_rhs(prob: QPProblem, it: Iterate, st: PMMState) -> tuple[np.ndarray, np.ndarray]:
    """Regularized residuals (c + Qx - A'y - z + rho(x - zeta), b - Ax - delta(y - eta))."""
    rd = dual_residual(prob, it) + st.rho * (it.x - st.zeta)
    rp = primal_residual(prob, it.x) - st.delta * (it.y - st.eta)
    return rd, rp


def predictor_corrector(prob: QPProblem, it: Iterate, st: PMMState, system: KKTSystem, tau: float = 0.995) -> StepResult:
    I = it.nonneg
    x, y, z = it.x, it.y, it.z
    rd, rp = newton_rhs(prob, it, st)
    tinv = it.theta_inv

    if not I.any():
        dx, dy, rep = system.solve(rd, rp)
        dz = np.zeros_like(z)
        new = Iterate(x + dx, y + dy, z.copy(), I)
        return StepResult(dx, dy, dz, new, 1.0, 1.0, rep, None)

    xI, zI = x[I], z[I]
    d1 = np.zeros_like(x)
    d1[I] = -zI
    dxp, dyp, rep_p = system.solve(rd - d1, rp)
    dzp = np.zeros_like(z)
    dzp[I] = d1[I] - tinv[I] * dxp[I]
    ax = step_length(xI, dxp[I], tau)
    az = step_length(zI, dzp[I], tau)
    mu_t = mehrotra_target(xI, zI, dxp[I], dzp[I], ax, az)

    d2 = np.zeros_like(x)
    d2[I] = (mu_t - dxp[I] * dzp[I]) / xI
    dxc, dyc, rep_c = system.solve(-d2, np.zeros(prob.m))
    dzc = np.zeros_like(z)
    dzc[I] = d2[I] - tinv[I] * dxc[I]

    dx, dy, dz = dxp + dxc, dyp + dyc, dzp + dzc
    ax = step_length(xI, dx[I], tau)
    az = step_length(zI, dz[I], tau)
    new = Iterate(x + ax * dx, y + az * dy, z + az * dz, I)
    return StepResult(dx, dy, dz, new, ax, az, rep_p, rep_c, (dxp, dyp, dzp), mu_t)


# ---------------------------------------------------------------------------
# penalties, termination, instability


def penalty_estimate_update(prob: QPProblem, it_prev: Iterate, it_new: Iterate, st: PMMState) -> PMMState:
    """Update the proximal estimates and shrink the penalties.

    An estimate moves to the new iterate when its residual fell to at most
    0.95 times the previous one; the penalty then shrinks by (1 - r), and by
    (1 - r/3) otherwise, where r is the relative decrease of mu.
    """
    st = st.copy()
    mu_prev, mu_new = it_prev.mu, it_new.mu
    pres_prev = np.linalg.norm(primal_residual(prob, it_prev.x))
    pres_new = np.linalg.norm(primal_residual(prob, it_new.x))
    dres_prev = np.linalg.norm(dual_residual(prob, it_prev))
    dres_new = np.linalg.norm(dual_residual(prob, it_new))
    # progress rate; an increase counts as no progress
    if mu_prev > 0:
        r = (mu_prev - mu_new) / mu_prev
    elif dres_prev > 0:
        # no barrier: use the dual residual reduction instead
        r = (dres_prev - dres_new) / dres_prev
    else:
        r = 0.0
    r = min(max(r, 0.0), 1.0)
    # a residual already at rounding level counts as progress, else the
    # estimate freezes and pins the other block through the proximal term
    p_floor = 1e-14 * max(np.linalg.norm(prob.b), 1.0)
    d_floor = 1e-14 * max(np.linalg.norm(prob.c), 1.0)

    # without a barrier every Newton step solves the proximal subproblem
    # exactly, so the estimates always move (plain proximal multipliers)
    exact = not it_new.nonneg.any()

    if exact or pres_new <= max(0.95 * pres_prev, p_floor):
        st.eta = it_new.y.copy()
        st.delta *= 1.0 - r
        st.eta_stall = 0
    else:
        st.delta *= 1.0 - r / 3.0
        st.eta_stall += 1
    if exact or dres_new <= max(0.95 * dres_prev, d_floor):
        st.zeta = it_new.x.copy()
        st.rho *= 1.0 - r
        st.zeta_stall = 0
    else:
        st.rho *= 1.0 - r / 3.0
        st.zeta_stall += 1
    st.delta = max(st.delta, st.reg_thr)
    st.rho = max(st.rho, st.reg_thr)
    return st


@dataclasses.dataclass(frozen=True)
class Residuals:
    primal: float
    dual: float
    mu: float
    reg_primal: float
    reg_dual: float


def residuals(prob: QPProblem, it: Iterate, st: PMMState) -> Residuals:
    rp = np.linalg.norm(primal_residual(prob, it.x)) / max(np.linalg.norm(prob.b), 1.0)
    rd = np.linalg.norm(dual_residual(prob, it)) / max(np.linalg.norm(prob.c), 1.0)
    reg_d, reg_p = newton_rhs(prob, it, st)
    return Residuals(float(rp), float(rd), it.mu, float(np.linalg.norm(reg_p)), float(np.linalg.norm(reg_d)))


def check_termination(prob: QPProblem, it: Iterate, st: PMMState, tol: float, k: int,
                      max_iter: int = 200, window: int = 5) -> Status | None:
    """Optimality, infeasibility and iteration-limit tests; None means continue.

    Infeasibility is declared when a proximal subproblem is solved (regularized
    residual <= tol) while the iterate drifts away from its estimate, which has
    not been updated for ``window`` iterations.  Besides the fixed drift
    threshold of 1e10, the drift also counts once the penalty sits at its
    floor and the unregularized residual, which equals penalty times drift,
    stays above tol: that residual can then no longer shrink.
    """
    res = residuals(prob, it, st)
    if res.dual <= tol and res.primal <= tol and res.mu <= tol:
        return Status.OPTIMAL
    at_floor_delta = st.delta <= st.reg_thr * (1 + 1e-12)
    at_floor_rho = st.rho <= st.reg_thr * (1 + 1e-12)
    y_drift = np.linalg.norm(it.y - st.eta)
    x_drift = np.linalg.norm(it.x - st.zeta)
    subproblem_done = res.mu <= tol
    if (res.reg_primal <= tol and st.eta_stall >= window and subproblem_done
            and (y_drift > 1e10 or (at_floor_delta and res.primal > tol))):
        return Status.PRIMAL_INFEASIBLE
    if (res.reg_dual <= tol and st.zeta_stall >= window and subproblem_done
            and (x_drift > 1e10 or (at_floor_rho and res.dual > tol))):
        return Status.DUAL_INFEASIBLE
    if k >= max_iter:
        return Status.ITERATION_LIMIT
    return None


def handle_instability(st: PMMState, max_raises: int = 10) -> tuple[PMMState, bool]:
    """Double both penalties; raise the floor if either sat on it.

    Returns the new state and whether the floor has now been raised
    ``max_raises`` times (ill-conditioned).
    """
    st = st.copy()
    at_floor = st.delta <= st.reg_thr * (1 + 1e-12) or st.rho <= st.reg_thr * (1 + 1e-12)
    st.delta *= 2.0
    st.rho *= 2.0
    if at_floor:
        st.reg_thr *= 2.0
        st.thr_raises += 1
    return st, st.thr_raises >= max_raises


# ---------------------------------------------------------------------------
# driver


@dataclasses.dataclass
class SolveResult:
    status: Status
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    objective: float
    ip_iterations: int
    krylov_iterations: int
    time: float
    primal_res: float
    dual_res: float
    mu: float
    mode: str
    x_original: np.ndarray
    trace: list[dict] = dataclasses.field(default_factory=list)
    name: str = ""

    def to_dict(self, include_solution: bool = True, include_trace: bool = True) -> dict:
        out = {
            "name": self.name,
            "status": self.status.value,
            "objective": self.objective,
            "ip_iterations": self.ip_iterations,
            "krylov_iterations": self.krylov_iterations,
            "time": self.time,
            "primal_res": self.primal_res,
            "dual_res": self.dual_res,
            "mu": self.mu,
            "mode": self.mode,
        }
        if include_solution:
            out["x"] = self.x_original.tolist()
        if include_trace:
            out["trace"] = self.trace
        return out


def _choose_mode(prob: QPProblem, mode: str) -> str:
    diag = prob.q_is_diagonal()
    if mode == "auto":
        return "cg" if diag else "minres"
    if mode == "cg" and not diag:
        raise ValueError("cg mode needs a zero or diagonal Q")
    return mode


def preprocess(prob: QPProblem, scale: bool = True) -> QPProblem:
    prob = qpio.remove_empty_rows(prob)
    if scale and prob.m:
        prob = qpio.geometric_row_scaling(prob)
    return prob


def solve(prob: QPProblem, config: Config | None = None, **overrides) -> SolveResult:
    cfg = config or Config()
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    t0 = time.perf_counter()
    mode = _choose_mode(prob, cfg.mode)
    P = preprocess(prob, cfg.scale)
    A = P.A
    qdiag = P.Q.diagonal()
    pc = cfg.precond
    maxit = cfg.maxit_cg if mode == "cg" else cfg.maxit_minres

    it, st = starting_point(P, tol=cfg.tol)
    ctrl = QualityController.for_matrix(A, pc)
    builder = NEBuilder(A)
    trace: list[dict] = []
    k = 0
    krylov_total = 0
    rejections = 0
    instabilities = 0
    status: Status | None = None

    while status is None:
        status = check_termination(P, it, st, cfg.tol, k, cfg.max_iter, cfg.infeasibility_window)
        if status is not None:
            break
        mu = it.mu
        tol_inner = inner_tolerance(mu)
        E = build_E(it.theta_inv, qdiag, st.rho, mu, ctrl.C_E)
        try:
            pre = builder.assemble(E, st.delta, ctrl.C_E)
        except IndefiniteMatrixError as exc:
            log.debug("iteration %d: %s", k, exc)
            st, ill = handle_instability(st, cfg.max_thr_raises)
            instabilities += 1
            if ill or instabilities > 50:
                status = Status.ILL_CONDITIONED
            continue

        G = 1.0 / (qdiag + it.theta_inv + st.rho)
        delta = st.delta

        def m_ne(v, G=G, delta=delta):
            return A @ (G * (A.T @ v)) + delta * v

        deflation = None
        if cfg.lr == "on" or (cfg.lr == "auto" and ctrl.lr_triggered):
            deflation = lru_setup(m_ne, pre, pc.p, pc.nu, pc.eig_tol, pc.lambda_screen, pc.screen_steps)
        system = KKTSystem(P, it, st, mode, pre, deflation, tol_inner, cfg.maxit_cg, cfg.maxit_minres)
        try:
            step = predictor_corrector(P, it, st, system, cfg.tau)
        except KrylovBreakdown as exc:
            log.debug("iteration %d: %s", k, exc)
            st, ill = handle_instability(st, cfg.max_thr_raises)
            instabilities += 1
            if ill or instabilities > 50:
                status = Status.ILL_CONDITIONED
            continue
        except DirectionRejected as exc:
            log.debug("iteration %d: %s", k, exc)
            rejections += 1
            ctrl.sharpen()
            if rejections >= cfg.max_rejections:
                status = Status.KRYLOV_FAILURE
            continue
        rejections = 0
        instabilities = 0

        rep = step.report
        tune(ctrl, rep, pre, maxit)
        its_p = step.report_pred.iterations
        its_c = step.report_corr.iterations if step.report_corr is not None else 0
        krylov_total += its_p + its_c
        new_st = penalty_estimate_update(P, it, step.iterate, st)
        it = step.iterate
        st = new_st
        k += 1
        res = residuals(P, it, st)
        trace.append({
            "k": k,
            "mu": res.mu,
            "delta": st.delta,
            "rho": st.rho,
            "primal_res": res.primal,
            "dual_res": res.dual,
            "krylov_iters_pred": its_p,
            "krylov_iters_corr": its_c,
            "nnz_P": pre.P_pattern_nnz,
            "C_E": pre.C_E,
            "lr_active": bool(deflation is not None and deflation.active),
            "alpha_x": step.alpha_x,
            "alpha_z": step.alpha_z,
        })
        log.debug("it %3d mu %.2e pres %.2e dres %.2e krylov %d/%d", k, res.mu, res.primal, res.dual, its_p, its_c)

    res = residuals(P, it, st)
    return SolveResult(
        status=status,
        x=it.x,
        y=it.y * P.row_scaling,
        z=it.z,
        objective=prob.objective(it.x),
        ip_iterations=k,
        krylov_iterations=krylov_total,
        time=time.perf_counter() - t0,
        primal_res=res.primal,
        dual_res=res.dual,
        mu=res.mu,
        mode=mode,
        x_original=prob.original_x(it.x),
        trace=trace,
        name=prob.name,
    )
