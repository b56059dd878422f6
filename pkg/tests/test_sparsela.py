import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from ipk.sparsela import (
    IndefiniteMatrixError,
    cholesky,
    dense_sym_eig,
    minimum_degree_ordering,
    solve_cholesky,
    spmv,
    symbolic_cholesky,
)


def _reconstruct(F):
    L = F.L.toarray()
    LLt = L @ L.T
    out = np.empty_like(LLt)
    p = F.perm
    out[np.ix_(p, p)] = LLt
    return out


def test_spmv_small():
    M = sp.csc_matrix([[1.0, 2.0], [0.0, 3.0]])
    assert spmv(M, np.ones(2)).tolist() == [3.0, 3.0]
    assert spmv(M, np.ones(2), transpose=True).tolist() == [1.0, 5.0]
    assert spmv(sp.identity(4, format="csc"), np.arange(4.0)).tolist() == [0, 1, 2, 3]


def test_spmv_against_loops():
    rng = np.random.default_rng(0)
    M = sp.random(50, 80, density=0.1, random_state=rng, format="csc")
    x = rng.standard_normal(80)
    D = M.toarray()
    ref = np.array([sum(D[i, j] * x[j] for j in range(80)) for i in range(50)])
    assert np.max(np.abs(spmv(M, x) - ref)) < 1e-13


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        spmv(sp.identity(3, format="csc"), np.ones(4))


def test_cholesky_diag_and_2x2():
    F = cholesky(sp.diags([4.0, 9.0]))
    assert np.sort(np.diag(F.L.toarray())).tolist() == [2.0, 3.0]
    F = cholesky(sp.csc_matrix([[4.0, 2.0], [2.0, 5.0]]))
    assert np.allclose(_reconstruct(F), [[4, 2], [2, 5]])
    if F.perm.tolist() == [0, 1]:
        assert np.allclose(F.L.toarray(), [[2, 0], [1, 2]])


def test_solve_small():
    F = cholesky(sp.diags([4.0, 9.0]))
    assert solve_cholesky(F, np.array([4.0, 9.0])) == pytest.approx([1.0, 1.0])
    F = cholesky(sp.csc_matrix([[4.0, 2.0], [2.0, 5.0]]))
    assert solve_cholesky(F, np.array([6.0, 7.0])) == pytest.approx([1.0, 1.0], abs=1e-14)


def test_indefinite_raises():
    with pytest.raises(IndefiniteMatrixError):
        cholesky(sp.csc_matrix([[1.0, 2.0], [2.0, 1.0]]))


@given(st.integers(0, 10_000), st.integers(5, 60))
@settings(max_examples=40, deadline=None)
def test_random_spd_reconstruction(seed, n):
    B = sp.random(n, n, density=0.1, random_state=seed)
    M = (B @ B.T + sp.identity(n)).tocsc()
    F = cholesky(M)
    D = M.toarray()
    assert np.linalg.norm(D - _reconstruct(F)) / np.linalg.norm(D) < 1e-12
    assert np.all(F.Lx[F.symbolic.Lp[:-1]] > 0)  # diagonal first in each column
    rhs = np.random.default_rng(seed).standard_normal(n)
    x = solve_cholesky(F, rhs)
    assert np.linalg.norm(D @ x - rhs) / np.linalg.norm(rhs) < 1e-12


def test_symbolic_reuse_on_subpattern():
    rng = np.random.default_rng(3)
    A = sp.random(30, 60, density=0.1, random_state=rng, format="csc")
    full = abs(A) @ abs(A).T + sp.identity(30)
    S = symbolic_cholesky(full)
    keep = rng.random(60) < 0.5
    P = (A[:, keep] @ A[:, keep].T + 0.1 * sp.identity(30)).tocsc()
    F = cholesky(P, S)
    assert np.linalg.norm(P.toarray() - _reconstruct(F)) < 1e-12 * np.linalg.norm(P.toarray())


def test_pattern_not_contained():
    S = symbolic_cholesky(sp.identity(3, format="csc"))
    with pytest.raises(ValueError):
        cholesky(sp.csc_matrix([[2.0, 1.0, 0], [1.0, 2.0, 0], [0, 0, 1.0]]), S)


def test_minimum_degree_is_permutation_and_reduces_fill():
    # arrow matrix: eliminating the hub first fills everything
    n = 30
    M = sp.lil_matrix((n, n))
    M[0, :] = 1.0
    M[:, 0] = 1.0
    M.setdiag(n)
    p = minimum_degree_ordering(M.tocsc())
    assert sorted(p.tolist()) == list(range(n))
    assert symbolic_cholesky(M.tocsc()).nnz_L <= 2 * n


def test_dense_eig_examples():
    assert dense_sym_eig(np.diag([1.0, 2.0, 3.0])).tolist() == pytest.approx([1, 2, 3])
    assert dense_sym_eig(np.array([[0.0, 1.0], [1.0, 0.0]])).tolist() == pytest.approx([-1, 1])
    assert dense_sym_eig(np.diag([2.0, 8.0]), np.diag([1.0, 2.0])).tolist() == pytest.approx([2, 4])


def test_dense_eig_rejects_non_spd_B():
    with pytest.raises(ValueError):
        dense_sym_eig(np.eye(2), np.diag([1.0, -1.0]))


@given(st.integers(0, 10_000), st.integers(2, 40))
@settings(max_examples=40, deadline=None)
def test_dense_eig_trace_and_residual(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    M = X + X.T
    lam = dense_sym_eig(M)
    assert np.all(np.diff(lam) >= 0)
    assert abs(lam.sum() - np.trace(M)) <= 1e-8 * max(1.0, np.abs(M).sum())
    Y = rng.standard_normal((n, n))
    B = Y @ Y.T + n * np.eye(n)
    lam, V = dense_sym_eig(M, B, vectors=True)
    R = M @ V - B @ V * lam
    assert np.max(np.linalg.norm(R, axis=0)) <= 1e-8 * np.linalg.norm(M, 2)
    assert np.allclose(V.T @ B @ V, np.eye(n), atol=1e-8)
