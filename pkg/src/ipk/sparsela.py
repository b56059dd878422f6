"""Sparse kernels: CSC products, ordered up-looking Cholesky, dense eigen-oracle.

The Cholesky factorization is split into a symbolic phase (fill-reducing
ordering, elimination tree, pattern of L and of each row subtree) computed
once for a sparsity pattern, and a numeric phase that can be repeated for any
matrix whose pattern is contained in it.  Entries missing from the numeric
matrix are treated as structural zeros.
"""

from __future__ import annotations

import dataclasses
import heapq

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp


__all__ = [
    "IndefiniteMatrixError",
    "SymbolicCholesky",
    "CholeskyFactor",
    "spmv",
    "minimum_degree_ordering",
    "symbolic_cholesky",
    "cholesky",
    "solve_cholesky",
    "dense_sym_eig",
]


class IndefiniteMatrixError(ArithmeticError):
    """A non-positive pivot was met during Cholesky factorization."""

    def __init__(self, column: int, pivot: float):
        self.column = column
        self.pivot = pivot
        super().__init__(f"non-positive pivot {pivot:.3e} at column {column}")


def spmv(M, x: np.ndarray, transpose: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    rows, cols = M.shape
    expected = rows if transpose else cols
    if x.ndim != 1 or x.shape[0] != expected:
        raise ValueError(f"dimension mismatch: operator {M.shape}, vector {x.shape}, transpose={transpose}")
    return M.T @ x if transpose else M @ x


# ---------------------------------------------------------------------------
# ordering


def minimum_degree_ordering(pattern) -> np.ndarray:
    """Minimum degree ordering of a symmetric sparsity pattern.

    Eliminates on the explicit elimination graph; ties go to the lowest index,
    so the result is deterministic.
    """
    S = sp.csr_matrix(pattern)
    n = S.shape[0]
    adj = [set(S.indices[S.indptr[i]:S.indptr[i + 1]].tolist()) - {i} for i in range(n)]
    heap = [(len(adj[i]), i) for i in range(n)]
    heapq.heapify(heap)
    done = np.zeros(n, dtype=bool)
    order = []
    while heap:
        deg, i = heapq.heappop(heap)
        if done[i] or deg != len(adj[i]):
            continue
        done[i] = True
        order.append(i)
        nbrs = adj[i]
        for j in nbrs:
            aj = adj[j]
            aj.discard(i)
            aj |= nbrs
            aj.discard(j)
            heapq.heappush(heap, (len(aj), j))
        adj[i] = set()
    return np.asarray(order, dtype=np.int64)


# ---------------------------------------------------------------------------
# numba kernels; C is the upper triangle (row <= col) of the permuted matrix in CSC


@numba.njit(cache=True)
def _etree(Cp, Ci, n):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@numba.njit(cache=True)
def _row_patterns(Cp, Ci, parent, n):
    """Row subtrees of L in topological order, concatenated (Rp, Ri)."""
    mark = np.full(n, -1, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    counts = np.zeros(n + 1, dtype=np.int64)
    # first pass: sizes
    for k in range(n):
        mark[k] = k
        cnt = 0
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i < k and mark[i] != k:
                mark[i] = k
                cnt += 1
                i = parent[i]
                if i == -1:
                    break
        counts[k + 1] = cnt
    Rp = np.cumsum(counts)
    Ri = np.empty(Rp[n], dtype=np.int64)
    mark[:] = -1
    for k in range(n):
        mark[k] = k
        top = n
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            length = 0
            while i < k and mark[i] != k:
                stack[length] = i
                length += 1
                mark[i] = k
                i = parent[i]
                if i == -1:
                    break
            while length > 0:
                top -= 1
                length -= 1
                stack[top] = stack[length]
        # stack[top:n] is topologically ordered
        q = Rp[k]
        for t in range(top, n):
            Ri[q] = stack[t]
            q += 1
    return Rp, Ri


@numba.njit(cache=True)
def _column_structure(Rp, Ri, n):
    """Column pointers/row indices of L (diagonal first, then increasing rows)."""
    counts = np.ones(n + 1, dtype=np.int64)
    counts[0] = 0
    for k in range(n):
        for q in range(Rp[k], Rp[k + 1]):
            counts[Ri[q] + 1] += 1
    Lp = np.cumsum(counts)
    Li = np.empty(Lp[n], dtype=np.int64)
    nxt = Lp[:-1].copy()
    for k in range(n):
        Li[nxt[k]] = k
        nxt[k] += 1
    for k in range(n):
        for q in range(Rp[k], Rp[k + 1]):
            i = Ri[q]
            Li[nxt[i]] = k
            nxt[i] += 1
    return Lp, Li


@numba.njit(cache=True)
def _numeric(Cp, Ci, Cx, Rp, Ri, Lp, Li, n):
    Lx = np.zeros(Lp[n])
    x = np.zeros(n)
    c = Lp[:-1].copy()
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            x[Ci[p]] = Cx[p]
        d = x[k]
        x[k] = 0.0
        for q in range(Rp[k], Rp[k + 1]):
            i = Ri[q]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            Lx[c[i]] = lki
            c[i] += 1
        if not d > 0.0:
            return Lx, k, d
        Lx[Lp[k]] = np.sqrt(d)
        c[k] = Lp[k] + 1
    return Lx, -1, 0.0


@numba.njit(cache=True)
def _lsolve(Lp, Li, Lx, x):
    n = Lp.shape[0] - 1
    for j in range(n):
        x[j] /= Lx[Lp[j]]
        xj = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj
    return x


@numba.njit(cache=True)
def _ltsolve(Lp, Li, Lx, x):
    n = Lp.shape[0] - 1
    for j in range(n - 1, -1, -1):
        s = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[p] * x[Li[p]]
        x[j] = s / Lx[Lp[j]]
    return x


# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SymbolicCholesky:
    """Ordering, elimination tree and the patterns of L for one sparsity pattern."""

    n: int
    perm: np.ndarray
    parent: np.ndarray
    Rp: np.ndarray
    Ri: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    # sorted keys (col * n + row) of the permuted upper triangle, for scattering values
    keys: np.ndarray
    Cp: np.ndarray
    Ci: np.ndarray

    @property
    def nnz_L(self) -> int:
        return int(self.Lp[-1])


def _permuted_upper(M: sp.spmatrix, perm: np.ndarray) -> sp.csc_matrix:
    M = sp.csc_matrix(M)
    C = sp.triu(M[perm][:, perm]).tocsc()
    C.sort_indices()
    return C


def symbolic_cholesky(pattern, perm: np.ndarray | None = None) -> SymbolicCholesky:
    """Symbolic analysis of a symmetric pattern (values ignored, diagonal assumed present)."""
    S = sp.csc_matrix(pattern, dtype=np.float64)
    n = S.shape[0]
    if S.shape != (n, n):
        raise ValueError("pattern must be square")
    S = S.copy()
    S.data = np.ones_like(S.data)
    S = (S + S.T + sp.identity(n, format="csc")).tocsc()
    if perm is None:
        perm = minimum_degree_ordering(S)
    perm = np.asarray(perm, dtype=np.int64)
    C = _permuted_upper(S, perm)
    Cp = C.indptr.astype(np.int64)
    Ci = C.indices.astype(np.int64)
    parent = _etree(Cp, Ci, n)
    Rp, Ri = _row_patterns(Cp, Ci, parent, n)
    Lp, Li = _column_structure(Rp, Ri, n)
    cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(Cp))
    # CSC with sorted rows is ordered by (col, row), so these keys are sorted
    keys = cols * n + Ci
    return SymbolicCholesky(n, perm, parent, Rp, Ri, Lp, Li, keys, Cp, Ci)


@dataclasses.dataclass(frozen=True)
class CholeskyFactor:
    """L (CSC, diagonal first per column) with P M P' = L L'."""

    symbolic: SymbolicCholesky
    Lx: np.ndarray

    @property
    def m(self) -> int:
        return self.symbolic.n

    @property
    def perm(self) -> np.ndarray:
        return self.symbolic.perm

    @property
    def L(self) -> sp.csc_matrix:
        s = self.symbolic
        return sp.csc_matrix((self.Lx, s.Li, s.Lp), shape=(s.n, s.n))

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.Lx))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return solve_cholesky(self, rhs)

    def half_solve(self, v: np.ndarray) -> np.ndarray:
        """w = L^{-1} P v, so that w'w = v' M^{-1} v."""
        s = self.symbolic
        w = np.ascontiguousarray(np.asarray(v, dtype=np.float64)[s.perm])
        return _lsolve(s.Lp, s.Li, self.Lx, w)

    def half_solve_t(self, w: np.ndarray) -> np.ndarray:
        """v = P' L^{-T} w (adjoint of ``half_solve``)."""
        s = self.symbolic
        t = _ltsolve(s.Lp, s.Li, self.Lx, np.array(w, dtype=np.float64))
        v = np.empty_like(t)
        v[s.perm] = t
        return v


def cholesky(M, symbolic: SymbolicCholesky | None = None) -> CholeskyFactor:
    """Factor a symmetric positive definite sparse matrix.

    With ``symbolic`` given, the pattern of ``M`` must be contained in the
    analysed pattern.  Raises IndefiniteMatrixError on a non-positive pivot.
    """
    M = sp.csc_matrix(M, dtype=np.float64)
    n = M.shape[0]
    if M.shape != (n, n):
        raise ValueError("matrix must be square")
    if symbolic is None:
        symbolic = symbolic_cholesky(M)
    elif symbolic.n != n:
        raise ValueError("symbolic analysis has the wrong dimension")
    C = _permuted_upper(M, symbolic.perm).tocoo()
    keys = C.col.astype(np.int64) * n + C.row.astype(np.int64)
    pos = np.searchsorted(symbolic.keys, keys)
    if np.any(pos >= symbolic.keys.size) or np.any(symbolic.keys[np.minimum(pos, symbolic.keys.size - 1)] != keys):
        raise ValueError("matrix pattern is not contained in the symbolic pattern")
    Cx = np.zeros(symbolic.keys.size)
    np.add.at(Cx, pos, C.data)
    Lx, k, d = _numeric(symbolic.Cp, symbolic.Ci, Cx, symbolic.Rp, symbolic.Ri, symbolic.Lp, symbolic.Li, n)
    if k >= 0:
        raise IndefiniteMatrixError(int(symbolic.perm[k]), float(d))
    return CholeskyFactor(symbolic, Lx)


def solve_cholesky(F: CholeskyFactor, rhs: np.ndarray) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != (F.m,):
        raise ValueError(f"dimension mismatch: factor {F.m}, rhs {rhs.shape}")
    return F.half_solve_t(F.half_solve(rhs))


# ---------------------------------------------------------------------------


def dense_sym_eig(M, B=None, vectors: bool = False):
    """Eigenvalues (ascending) of M v = lam v, or of M v = lam B v with B SPD.

    The generalized pencil is first equilibrated by diag(B)^{-1/2} on both
    sides, which leaves the eigenvalues unchanged.
    """
    M = np.asarray(M.toarray() if sp.issparse(M) else M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("M must be square")
    M = 0.5 * (M + M.T)
    if B is None:
        if vectors:
            return scipy.linalg.eigh(M)
        return scipy.linalg.eigh(M, eigvals_only=True)
    B = np.asarray(B.toarray() if sp.issparse(B) else B, dtype=np.float64)
    if B.shape != M.shape:
        raise ValueError("B must match M")
    B = 0.5 * (B + B.T)
    dB = np.diag(B)
    if np.any(dB <= 0):
        raise ValueError("B is not positive definite")
    s = 1.0 / np.sqrt(dB)
    Ms = s[:, None] * M * s[None, :]
    Bs = s[:, None] * B * s[None, :]
    try:
        if vectors:
            lam, V = scipy.linalg.eigh(Ms, Bs)
            return lam, s[:, None] * V
        return scipy.linalg.eigh(Ms, Bs, eigvals_only=True)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"B is not positive definite: {exc}") from None
