import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from ipk import qpio
from ipk.qpio import MPSParseError, QPProblem, UnsupportedFeatureError

SIMPLE = """\
NAME          SIMPLE
ROWS
 N  COST
 E  R1
COLUMNS
    X1        COST               1.0   R1                 1.0
    X2        R1                 1.0
RHS
    RHS       R1                 1.0
ENDATA
"""

FREE_X2 = SIMPLE.replace("ENDATA", "BOUNDS\n FR BND       X2\nENDATA")

QPS = """\
NAME          QP1
ROWS
 N  OBJ
 E  R1
COLUMNS
    X1        OBJ                1.0   R1                 1.0
    X2        OBJ               -1.0   R1                 1.0
RHS
    RHS       R1                 1.0
QUADOBJ
    X1        X1                 2.0
ENDATA
"""


def test_simple_equality_row():
    p = qpio.parse_mps(SIMPLE)
    assert p.A.toarray().tolist() == [[1.0, 1.0]]
    assert p.b.tolist() == [1.0]
    assert p.c.tolist() == [1.0, 0.0]
    assert p.I.tolist() == [0, 1]
    assert p.F.tolist() == []
    assert p.is_lp()


def test_free_bound():
    p = qpio.parse_mps(FREE_X2)
    assert p.I.tolist() == [0]
    assert p.F.tolist() == [1]


def test_quadobj_objective():
    p = qpio.parse_mps(QPS, format="qps")
    Q = p.Q.toarray()
    assert Q[0, 0] == 2.0 and np.count_nonzero(Q) == 1
    x = np.array([1.0, 0.0])
    # 0.5 * 2 * 1^2 + 1 * 1 + (-1) * 0
    assert p.objective(x) == pytest.approx(2.0, abs=1e-15)


def test_read_problem_detects_qps(tmp_path):
    f = tmp_path / "qp1.mps"
    f.write_text(QPS)
    p = qpio.read_problem(f)
    assert p.Q.nnz == 1 and p.name == "QP1"


def test_inequality_rows_get_slacks():
    text = SIMPLE.replace(" E  R1", " L  R1")
    p = qpio.parse_mps(text)
    assert p.n == 3
    assert p.A.toarray().tolist() == [[1.0, 1.0, 1.0]]
    assert p.nonneg.all()
    g = qpio.parse_mps(SIMPLE.replace(" E  R1", " G  R1"))
    assert g.A.toarray().tolist() == [[1.0, 1.0, -1.0]]


def test_bounds_shift_and_upper_bound():
    text = SIMPLE.replace("ENDATA", "BOUNDS\n LO BND       X1                 2.0\n UP BND       X2                 5.0\nENDATA")
    p = qpio.parse_mps(text)
    # x1 = 2 + x1', so the constant c1 * 2 moves into the objective offset
    assert p.obj_offset == pytest.approx(2.0)
    assert p.b[0] == pytest.approx(-1.0)
    # upper bound on x2 adds a row x2 + s = 5
    assert p.m == 2
    x = np.zeros(p.n)
    assert p.original_x(x).tolist() == [2.0, 0.0]


def test_malformed_header_reports_line():
    text = SIMPLE.replace("COLUMNS", "COLUMNZ")
    with pytest.raises(MPSParseError) as err:
        qpio.parse_mps(text)
    assert err.value.line == 5


def test_duplicate_entry_rejected():
    text = SIMPLE.replace("    X2        R1                 1.0\n",
                          "    X2        R1                 1.0\n    X2        R1                 2.0\n")
    with pytest.raises(MPSParseError, match="duplicate"):
        qpio.parse_mps(text)


def test_sos_unsupported():
    text = SIMPLE.replace("ENDATA", "SOS\n S1 SOS       s1:1\nENDATA")
    with pytest.raises(UnsupportedFeatureError):
        qpio.parse_mps(text)


def test_bad_fixture_is_parse_error():
    from oracles import DATA
    with pytest.raises(MPSParseError):
        qpio.read_problem(DATA / "bad.mps")


def test_maximize_is_negated():
    text = SIMPLE.replace("ROWS", "OBJSENSE\n    MAX\nROWS")
    p = qpio.parse_mps(text)
    assert p.c.tolist() == [-1.0, 0.0]


# --- scaling -----------------------------------------------------------------


def _prob(A, b=None):
    A = sp.csc_matrix(np.asarray(A, dtype=float))
    m, n = A.shape
    return QPProblem(Q=None, A=A, b=np.ones(m) if b is None else b, c=np.zeros(n), nonneg=np.ones(n, bool))


def test_scaling_factor_formula():
    p = qpio.geometric_row_scaling(_prob([[100.0, 4.0]]))
    assert p.row_scaling[0] == pytest.approx(0.05)
    assert p.A.toarray()[0].tolist() == pytest.approx([5.0, 0.2])


def test_well_scaled_untouched():
    p0 = _prob([[1.0, 0.5], [2.0, 9.0]])
    p = qpio.geometric_row_scaling(p0)
    assert np.array_equal(p.A.toarray(), p0.A.toarray())
    assert p.row_scaling.tolist() == [1.0, 1.0]


def test_badly_scaled_diagonal():
    p = qpio.geometric_row_scaling(_prob([[1000.0, 0.0], [0.0, 0.001]]))
    assert p.row_scaling == pytest.approx([1e-3, 1e3])
    R = abs(p.A.tocsr())
    prods = R.max(axis=1).toarray().ravel() * np.minimum.reduceat(R.data, R.indptr[:-1])
    assert prods == pytest.approx([1.0, 1.0])


def test_empty_row_presolve():
    p = _prob([[1.0, 1.0], [0.0, 0.0]], b=np.array([1.0, 0.0]))
    assert qpio.remove_empty_rows(p).m == 1
    bad = _prob([[1.0, 1.0], [0.0, 0.0]], b=np.array([1.0, 3.0]))
    with pytest.raises(qpio.TriviallyInfeasibleError):
        qpio.remove_empty_rows(bad)


matrices = st.integers(0, 10_000).map(
    lambda s: sp.random(4, 6, density=0.6, random_state=s,
                        data_rvs=lambda k: np.random.default_rng(s).uniform(1e-3, 1e3, k)
                        * np.random.default_rng(s + 1).choice([-1, 1], k)).toarray()
)


@given(matrices)
@settings(max_examples=60, deadline=None)
def test_scaling_idempotent_and_consistent(A):
    A[np.arange(4), np.arange(4)] += 1.0  # no empty rows
    p = _prob(A, b=A @ np.ones(6))
    s1 = qpio.geometric_row_scaling(p)
    if qpio.is_well_scaled(s1.A):
        s2 = qpio.geometric_row_scaling(s1)
        assert np.array_equal(s2.A.toarray(), s1.A.toarray())
    # (DA)x = Db exactly when Ax = b
    x = np.ones(6)
    assert np.allclose(s1.A @ x, s1.b, rtol=1e-12, atol=1e-12)
    D = s1.row_scaling
    assert np.allclose(D[:, None] * A, s1.A.toarray(), rtol=1e-14)


@given(st.integers(0, 10_000), st.sampled_from(["none", "diag", "full"]), st.integers(0, 3))
@settings(max_examples=40, deadline=None)
def test_mps_round_trip(seed, q, free):
    from oracles import random_qp

    p = random_qp(seed, 5, 9, q, free=free)
    text = qpio.write_mps(p)
    r = qpio.parse_mps(text, format="qps" if p.Q.nnz else "mps")
    assert np.array_equal(r.A.toarray(), p.A.toarray())
    assert np.array_equal(r.Q.toarray(), p.Q.toarray())
    assert np.array_equal(r.b, p.b)
    assert np.array_equal(r.c, p.c)
    assert r.I.tolist() == p.I.tolist() and r.F.tolist() == p.F.tolist()


def test_json_round_trip():
    from oracles import random_qp

    p = random_qp(3, 4, 7, "full", free=2)
    r = qpio.problem_from_json(qpio.problem_to_json(p))
    assert np.array_equal(r.A.toarray(), p.A.toarray())
    assert np.array_equal(r.Q.toarray(), p.Q.toarray())
    assert r.F.tolist() == p.F.tolist()


def test_q_symmetry_enforced():
    with pytest.raises(ValueError):
        QPProblem(Q=sp.csc_matrix([[1.0, 1.0], [0.0, 1.0]]), A=sp.csc_matrix([[1.0, 1.0]]),
                  b=[1.0], c=[0.0, 0.0], nonneg=[True, True])
