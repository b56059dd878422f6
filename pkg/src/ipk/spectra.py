"""Dense checks of the eigenvalue bounds for the preconditioned systems.

Three properties are verified on small random instances:

* normal equations: every eigenvalue of P_NE^{-1} M_NE lies in
  [1, 1 + C_E mu sigma_max(A)^2 / delta], and at least m - rank(A) of them
  equal one;
* low-rank deflation with exact rightmost eigenvectors maps those to nu and
  leaves the remaining eigenvalues unchanged;
* augmented system: the eigenvalues of P_AS^{-1} M_AS lie in
  [-beta_F - sqrt(beta_NE), -alpha_F] U [1/(1 + beta_F), 1 + sqrt(beta_NE - 1)].

All spectra are computed from symmetric similarity transforms with dense
LAPACK routines.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Iterable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .precond import LowRankDeflation, build_E, lru_apply
from .sparsela import cholesky, dense_sym_eig

__all__ = [
    "Instance",
    "generate_instance",
    "check_theorem1",
    "check_theorem2",
    "check_theorem3",
    "sweep",
    "DEFAULT_MUS",
]

DEFAULT_MUS = (1.0, 1e-2, 1e-4, 1e-6)


@dataclasses.dataclass
class Instance:
    A: np.ndarray
    theta: np.ndarray
    Q: np.ndarray
    rho: float
    delta: float
    mu: float
    C_E: float
    seed: int = 0

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def qdiag(self) -> np.ndarray:
        return np.diag(self.Q).copy()

    @property
    def F_tilde(self) -> np.ndarray:
        """Diagonal of Q~ + Theta^{-1} + rho I."""
        return self.qdiag + 1.0 / self.theta + self.rho

    @property
    def E(self) -> np.ndarray:
        return build_E(1.0 / self.theta, self.qdiag, self.rho, self.mu, self.C_E)

    def M_NE(self) -> np.ndarray:
        return (self.A / self.F_tilde) @ self.A.T + self.delta * np.eye(self.m)

    def P_NE(self) -> np.ndarray:
        return (self.A * self.E) @ self.A.T + self.delta * np.eye(self.m)


def generate_instance(seed: int, m: int = 20, n: int = 40, mu: float = 1e-2, delta: float | None = None,
                      rho: float | None = None, C_E: float | None = None, q: str = "none",
                      density: float = 0.3, rank_deficiency: int = 0,
                      theta_range: tuple[float, float] = (1e-8, 1e8)) -> Instance:
    """Random instance; ``q`` is 'none', 'diag' or 'full' (dense PSD with off-diagonal terms).

    Theta is log-uniform over ``theta_range``; delta and rho default to mu and
    C_E to a log-uniform draw from [0.1, 10].  The last ``rank_deficiency``
    rows of A duplicate earlier rows.
    """
    rng = np.random.default_rng(seed)
    A = sp.random(m, n, density=density, random_state=rng, data_rvs=rng.standard_normal).toarray()
    # no empty rows or columns
    for i in np.flatnonzero(~A.any(axis=1)):
        A[i, rng.integers(n)] = rng.standard_normal()
    for j in np.flatnonzero(~A.any(axis=0)):
        A[rng.integers(m), j] = rng.standard_normal()
    for k in range(rank_deficiency):
        A[m - 1 - k] = A[k % max(m - rank_deficiency, 1)]
    lo, hi = np.log10(theta_range[0]), np.log10(theta_range[1])
    theta = 10.0 ** rng.uniform(lo, hi, n)
    if q == "none":
        Q = np.zeros((n, n))
    elif q == "diag":
        Q = np.diag(10.0 ** rng.uniform(-2, 1, n))
    elif q == "full":
        B = rng.standard_normal((n, max(2, n // 4))) / math.sqrt(n)
        Q = B @ B.T + np.diag(10.0 ** rng.uniform(-2, 0, n))
    else:
        raise ValueError(f"unknown q kind {q!r}")
    if C_E is None:
        C_E = 10.0 ** rng.uniform(-1, 1)
    return Instance(A, theta, Q, rho if rho is not None else mu, delta if delta is not None else mu, mu, C_E, seed)


def _spectral_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2))


# ---------------------------------------------------------------------------


def ne_eigenvalues(inst: Instance) -> np.ndarray:
    """Eigenvalues of P_NE^{-1} M_NE, ascending.

    M_NE - P_NE = A D A' with D = G~ - E >= 0 supported on the dropped
    columns, so lambda = 1 + s^2 over the singular values s of L^{-1} A D^{1/2}
    (P_NE = L L'), padded with ones.
    """
    P = inst.P_NE()
    L = scipy.linalg.cholesky(P, lower=True)
    d = 1.0 / inst.F_tilde - inst.E
    drop = np.flatnonzero(d > 0)
    B = scipy.linalg.solve_triangular(L, inst.A[:, drop] * np.sqrt(d[drop]), lower=True)
    s = scipy.linalg.svdvals(B) if drop.size else np.zeros(0)
    lam = np.ones(inst.m)
    lam[: s.size] += s ** 2
    return np.sort(lam)


def check_theorem1(inst: Instance) -> dict:
    lam = ne_eigenvalues(inst)
    sigma = float(scipy.linalg.svdvals(inst.A)[0])
    bound = 1.0 + inst.C_E * inst.mu / inst.delta * sigma ** 2
    scale = _spectral_norm(inst.M_NE())
    tol_up = 1e-8 * scale
    rank = int(np.linalg.matrix_rank(inst.A))
    unit = int(np.count_nonzero(np.abs(lam - 1.0) <= 1e-8))
    violations = []
    if lam[0] < 1.0 - 1e-9:
        violations.append({"kind": "lower", "value": float(lam[0])})
    if lam[-1] > bound + tol_up:
        violations.append({"kind": "upper", "value": float(lam[-1]), "bound": bound})
    if unit < inst.m - rank:
        violations.append({"kind": "unit_count", "count": unit, "required": inst.m - rank})
    return {
        "seed": inst.seed,
        "mu": inst.mu,
        "lambda_min": float(lam[0]),
        "lambda_max": float(lam[-1]),
        "bound": bound,
        "upper_margin": float(bound - lam[-1]),
        "lower_margin": float(lam[0] - 1.0),
        "sigma_max_A": sigma,
        "unit_count": unit,
        "rank_A": rank,
        "violations": violations,
    }


def check_theorem2(inst: Instance, p: int, nu: float = 10.0, rtol: float = 1e-7) -> dict:
    """Deflate the p rightmost exact eigenvectors and compare spectra before and after."""
    M = inst.M_NE()
    P = inst.P_NE()
    lam, W = dense_sym_eig(M, P, vectors=True)
    m = inst.m
    p = max(0, min(p, m))
    pre = _ne_factor(P)
    D = LowRankDeflation.from_vectors(lambda v: M @ v, W[:, m - p:], nu)
    H = np.column_stack([lru_apply(D, pre, e) for e in np.eye(m)])
    H = 0.5 * (H + H.T)
    C = scipy.linalg.cholesky(M, lower=True)
    after = np.sort(scipy.linalg.eigvalsh(C.T @ H @ C))
    expected = np.sort(np.concatenate([lam[: m - p], np.full(p, nu)]))
    err = np.abs(after - expected) / np.maximum(1.0, np.abs(expected))
    violations = []
    if err.size and err.max() > rtol:
        i = int(err.argmax())
        violations.append({"kind": "spectrum_changed", "observed": float(after[i]),
                           "expected": float(expected[i]), "rel_error": float(err[i])})
    return {
        "seed": inst.seed,
        "mu": inst.mu,
        "p": p,
        "lambda_max_before": float(lam[-1]) if m else float("nan"),
        "lambda_max_after": float(after[-1]) if m else float("nan"),
        "max_rel_error": float(err.max()) if err.size else 0.0,
        "violations": violations,
    }


def _ne_factor(P: np.ndarray):
    from .precond import NEPreconditioner

    Ps = sp.csc_matrix(P)
    return NEPreconditioner(np.zeros(0), 0, Ps.nnz, cholesky(Ps), float("nan"), float("nan"), Ps)


def _sym_inv_sqrt_apply(L: np.ndarray, X: np.ndarray) -> np.ndarray:
    return scipy.linalg.solve_triangular(L, X, lower=True)


def check_theorem3(inst: Instance, rtol: float = 1e-8) -> dict:
    n, m = inst.n, inst.m
    F = inst.Q + np.diag(1.0 / inst.theta + inst.rho)
    Ft = inst.F_tilde
    s = 1.0 / np.sqrt(Ft)
    F_hat = s[:, None] * F * s[None, :]
    fl = scipy.linalg.eigvalsh(F_hat)
    alpha_F, beta_F = float(fl[0]), float(fl[-1])
    lam_ne = ne_eigenvalues(inst)
    alpha_NE, beta_NE = float(lam_ne[0]), float(lam_ne[-1])

    P = inst.P_NE()
    L = scipy.linalg.cholesky(P, lower=True)
    B = _sym_inv_sqrt_apply(L, inst.A * s)  # L^{-1} A F~^{-1/2}
    Linv = _sym_inv_sqrt_apply(L, np.eye(m))
    S = np.block([[-F_hat, B.T], [B, inst.delta * (Linv @ Linv.T)]])
    lam = scipy.linalg.eigvalsh(0.5 * (S + S.T))

    lo_minus, hi_minus = -beta_F - math.sqrt(beta_NE), -alpha_F
    lo_plus, hi_plus = 1.0 / (1.0 + beta_F), 1.0 + math.sqrt(max(beta_NE - 1.0, 0.0))
    scale = max(1.0, float(np.abs(lam).max()))
    tol = rtol * scale
    inside = ((lam >= lo_minus - tol) & (lam <= hi_minus + tol)) | ((lam >= lo_plus - tol) & (lam <= hi_plus + tol))
    violations = [{"kind": "outside", "value": float(v)} for v in lam[~inside]]
    # the trace of F~^{-1} F is n, so its spectrum straddles one
    if not alpha_F <= 1.0 + 1e-12 or not beta_F >= 1.0 - 1e-12:
        violations.append({"kind": "alpha_beta_F", "alpha_F": alpha_F, "beta_F": beta_F})
    neg, pos = lam[lam < 0], lam[lam > 0]
    lam_p = np.linalg.eigvalsh(P)
    return {
        "seed": inst.seed,
        "mu": inst.mu,
        "alpha_F": alpha_F,
        "beta_F": beta_F,
        "kappa_F": beta_F / alpha_F,
        "alpha_NE": alpha_NE,
        "beta_NE": beta_NE,
        "kappa_NE": beta_NE / alpha_NE,
        "gamma_p_range": [float(lam_p[0]), float(lam_p[-1])],
        "omega_max": inst.delta / float(lam_p[0]),
        "sigma_max_A": float(scipy.linalg.svdvals(inst.A)[0]),
        "I_minus": [lo_minus, hi_minus],
        "I_plus": [lo_plus, hi_plus],
        "observed_negative": [float(neg.min()), float(neg.max())] if neg.size else None,
        "observed_positive": [float(pos.min()), float(pos.max())] if pos.size else None,
        "margins": {
            "minus_low": float(neg.min() - lo_minus) if neg.size else None,
            "minus_high": float(hi_minus - neg.max()) if neg.size else None,
            "plus_low": float(pos.min() - lo_plus) if pos.size else None,
            "plus_high": float(hi_plus - pos.max()) if pos.size else None,
        },
        "minres_kappa_estimate": (1 + beta_F) / alpha_F * (1 + math.sqrt(max(beta_NE - 1, 0))) * (beta_F + math.sqrt(beta_NE)),
        "violations": violations,
    }


# ---------------------------------------------------------------------------


def _min_or_none(values):
    values = [v for v in values if v is not None]
    return min(values) if values else None


def sweep(theorem: int, seeds: Iterable[int] | int = 100, mus: Iterable[float] = DEFAULT_MUS,
          delta: float | None = None, rho: float | None = None, m: int | None = None, n: int | None = None,
          p: int = 3, nu: float = 10.0, cycle_mus: bool = False) -> dict:
    """Run one theorem check over seeds x mus and summarize.

    With ``cycle_mus`` each seed is checked once, at mus[i % len(mus)], instead
    of once per mu.  delta and rho default to mu.  Instance shapes default to 20x40 (normal
    equations, deflation) and 30x60 with a dense Q (augmented system).
    """
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    mus = list(mus)
    if cycle_mus:
        pairs = [(mus[i % len(mus)], seed) for i, seed in enumerate(seeds)]
    else:
        pairs = [(mu, seed) for mu in mus for seed in seeds]
    results = []
    for mu, seed in pairs:
        if theorem == 1:
            inst = generate_instance(seed, m or 20, n or 40, mu, delta, rho,
                                     rank_deficiency=seed % 3)
            results.append(check_theorem1(inst))
        elif theorem == 2:
            # moderate spread keeps the before/after comparison well conditioned
            inst = generate_instance(seed, m or 20, n or 40, mu, delta, rho, theta_range=(1e-2, 1e2))
            results.append(check_theorem2(inst, p, nu))
        elif theorem == 3:
            inst = generate_instance(seed, m or 30, n or 60, mu, delta, rho, q="full")
            results.append(check_theorem3(inst))
        else:
            raise ValueError(f"theorem must be 1, 2 or 3, got {theorem}")
    violations = [dict(v, seed=r["seed"], mu=r["mu"]) for r in results for v in r["violations"]]
    summary: dict = {
        "theorem": theorem,
        "seeds": seeds,
        "mus": mus,
        "instances": len(results),
        "violations": violations,
    }
    if theorem == 1:
        summary["margins"] = {
            "min_upper_margin": _min_or_none(r["upper_margin"] for r in results),
            "min_lower_margin": _min_or_none(r["lower_margin"] for r in results),
            "max_lambda": max((r["lambda_max"] for r in results), default=None),
            "max_bound": max((r["bound"] for r in results), default=None),
        }
    elif theorem == 2:
        summary["margins"] = {"max_rel_error": max((r["max_rel_error"] for r in results), default=None)}
    else:
        summary["margins"] = {
            key: _min_or_none(r["margins"][key] for r in results)
            for key in ("minus_low", "minus_high", "plus_low", "plus_high")
        }
    return summary
