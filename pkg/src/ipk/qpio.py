"""Problem data model, fixed-format MPS/QPS reader/writer and row scaling.

Every problem is brought into the form::

    min  c'x + 1/2 x'Qx   s.t.  Ax = b,  x[I] >= 0,  x[F] free

Bounds and inequality rows from the file are rewritten with slack variables
and column shifts; the affine map back to the original variables is kept on
the problem so that objectives and primal solutions can be reported in the
units of the input file.
"""

from __future__ import annotations

import dataclasses
import json
import math
from typing import Iterable

import numpy as np
import scipy.sparse as sp

__all__ = [
    "MPSParseError",
    "UnsupportedFeatureError",
    "TriviallyInfeasibleError",
    "QPProblem",
    "canonical_csc",
    "parse_mps",
    "read_problem",
    "write_mps",
    "write_mps_general",
    "geometric_row_scaling",
    "is_well_scaled",
    "remove_empty_rows",
    "problem_to_json",
    "problem_from_json",
]

INF = math.inf


class MPSParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedFeatureError(MPSParseError):
    pass


class TriviallyInfeasibleError(ValueError):
    """An all-zero row of A carries a nonzero right-hand side."""


def canonical_csc(M, shape=None) -> sp.csc_matrix:
    """Duplicate-free CSC with sorted row indices and no stored zeros."""
    if shape is None:
        M = sp.csc_matrix(M, dtype=np.float64)
    else:
        M = sp.csc_matrix(M, shape=shape, dtype=np.float64)
    M.sum_duplicates()
    M.eliminate_zeros()
    M.sort_indices()
    return M


@dataclasses.dataclass
class QPProblem:
    """Standard-form LP/QP.

    ``nonneg`` is a boolean mask over the columns; ``I`` and ``F`` are the
    index arrays derived from it.  ``shift``, ``sign`` and ``n_orig`` map the
    first ``n_orig`` columns back to the file's variables via
    ``x_orig = shift + sign * x[:n_orig]``, and ``obj_offset`` is the constant
    dropped from the objective by that substitution.
    """

    Q: sp.csc_matrix
    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    nonneg: np.ndarray
    name: str = ""
    row_scaling: np.ndarray | None = None
    obj_offset: float = 0.0
    shift: np.ndarray | None = None
    sign: np.ndarray | None = None
    n_orig: int | None = None
    col_names: list[str] | None = None

    def __post_init__(self):
        m, n = self.A.shape
        self.A = canonical_csc(self.A)
        self.Q = canonical_csc(self.Q if self.Q is not None else sp.csc_matrix((n, n)), shape=(n, n))
        self.b = np.asarray(self.b, dtype=np.float64).reshape(m)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(n)
        self.nonneg = np.asarray(self.nonneg, dtype=bool).reshape(n)
        if self.row_scaling is None:
            self.row_scaling = np.ones(m)
        if self.shift is None:
            self.shift = np.zeros(n)
        if self.sign is None:
            self.sign = np.ones(n)
        if self.n_orig is None:
            self.n_orig = n
        if (abs(self.Q - self.Q.T) > 0).nnz:
            raise ValueError("Q must be symmetric")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def I(self) -> np.ndarray:  # noqa: E743
        return np.flatnonzero(self.nonneg)

    @property
    def F(self) -> np.ndarray:
        return np.flatnonzero(~self.nonneg)

    def is_lp(self) -> bool:
        return self.Q.nnz == 0

    def q_is_diagonal(self) -> bool:
        Q = self.Q.tocoo()
        return bool(np.all(Q.row == Q.col))

    def objective(self, x: np.ndarray) -> float:
        """Objective in the original units (offset restored)."""
        return float(self.c @ x + 0.5 * x @ (self.Q @ x) + self.obj_offset)

    def original_x(self, x: np.ndarray) -> np.ndarray:
        return self.shift[: self.n_orig] + self.sign[: self.n_orig] * x[: self.n_orig]

    def replace(self, **changes) -> "QPProblem":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# MPS reading


# 0-based [start, end) of the six fixed-format fields
_FIELDS = ((1, 3), (4, 12), (14, 22), (24, 36), (39, 47), (49, 61))
_GAPS = (0, 3, 12, 13, 22, 23, 36, 37, 38, 47, 48)

_SECTIONS = {
    "NAME", "ROWS", "COLUMNS", "RHS", "RANGES", "BOUNDS",
    "QUADOBJ", "QMATRIX", "QSECTION", "ENDATA", "OBJSENSE",
}
_UNSUPPORTED = {"SOS", "SETS", "QCMATRIX", "CSECTION", "INDICATORS", "GENERAL", "INTEGER", "BINARY"}


def _fixed_fields(line: str) -> list[str] | None:
    """Split a data line on fixed columns, or return None if it is not laid out that way."""
    if "\t" in line or len(line) > 61:
        return None
    padded = line.ljust(61)
    if any(padded[g] != " " for g in _GAPS):
        return None
    fields = [padded[a:b].strip() for a, b in _FIELDS]
    while fields and not fields[-1]:
        fields.pop()
    return fields


def _split_data(line: str, section: str) -> list[str]:
    """Return [code, name1, name2, value, name3, value] style fields."""
    fixed = _fixed_fields(line)
    tokens = line.split()
    if fixed is not None and fixed and [t for t in fixed if t] == tokens:
        return fixed
    if fixed is not None:
        try:
            _fields_to_numbers(fixed, section)
            return fixed
        except (ValueError, IndexError):
            pass
    # whitespace-separated fallback: leading code column only in ROWS/BOUNDS
    if section in ("ROWS", "BOUNDS"):
        return tokens
    return [""] + tokens


def _fields_to_numbers(fields: list[str], section: str) -> None:
    if section in ("COLUMNS", "RHS", "RANGES", "QUADOBJ", "QMATRIX", "QSECTION"):
        float(fields[3])
        if len(fields) > 5 and fields[4]:
            float(fields[5])
    elif section == "BOUNDS" and len(fields) > 3 and fields[3]:
        float(fields[3])


def _pairs(fields: list[str], start: int) -> Iterable[tuple[str, str]]:
    """(name, value) pairs found at positions start, start+1, start+2, ..."""
    rest = fields[start:]
    for i in range(0, len(rest) - 1, 2):
        if rest[i]:
            yield rest[i], rest[i + 1]


def parse_mps(text: str, format: str = "mps", name: str | None = None) -> QPProblem:
    """Parse fixed-format MPS (or QPS with a QUADOBJ/QMATRIX section).

    Raises MPSParseError (with a line number) on malformed input and
    UnsupportedFeatureError for SOS/integer content.
    """
    if format not in ("mps", "qps"):
        raise ValueError(f"unknown format {format!r}")
    section = None
    prob_name = name or ""
    obj_row = None
    row_type: dict[str, str] = {}
    row_index: dict[str, int] = {}
    col_index: dict[str, int] = {}
    col_names: list[str] = []
    entries: dict[tuple[int, int], float] = {}
    cost: dict[int, float] = {}
    rhs: dict[int, float] = {}
    ranges: dict[int, float] = {}
    lower: dict[int, float] = {}
    upper: dict[int, float] = {}
    quad: dict[tuple[int, int], float] = {}
    obj_const = 0.0
    maximize = False
    seen_end = False
    last_col = None
    quad_kind = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("*"):
            continue
        if not line[0].isspace():
            head = line.split()
            key = head[0].upper()
            if key in _UNSUPPORTED:
                raise UnsupportedFeatureError(f"unsupported section {key}", lineno)
            if key not in _SECTIONS:
                raise MPSParseError(f"malformed section header {line.strip()!r}", lineno)
            if seen_end:
                raise MPSParseError("content after ENDATA", lineno)
            section = "QUADOBJ" if key == "QSECTION" else key
            if section in ("QUADOBJ", "QMATRIX"):
                quad_kind = section
            if key == "NAME":
                if name is None:
                    prob_name = line[4:].strip() if len(head) > 1 else ""
            elif key == "ENDATA":
                seen_end = True
            elif key == "OBJSENSE" and len(head) > 1:
                maximize = head[1].upper() in ("MAX", "MAXIMIZE")
            continue

        if section is None:
            raise MPSParseError("data line before any section header", lineno)

        if section == "OBJSENSE":
            maximize = line.strip().upper() in ("MAX", "MAXIMIZE")
            continue

        if section == "ROWS":
            tok = line.split(None, 1)
            if len(tok) != 2:
                raise MPSParseError("ROWS entry needs a type and a name", lineno)
            kind, rname = tok[0].upper(), tok[1].strip()
            if kind not in ("N", "E", "L", "G"):
                raise MPSParseError(f"unknown row type {kind!r}", lineno)
            if rname in row_type:
                raise MPSParseError(f"duplicate row {rname!r}", lineno)
            row_type[rname] = kind
            if kind == "N":
                if obj_row is None:
                    obj_row = rname
            else:
                row_index[rname] = len(row_index)
            continue

        fields = _split_data(line, section)
        try:
            if section == "COLUMNS":
                if "'MARKER'" in line.upper():
                    raise UnsupportedFeatureError("integer markers are not supported", lineno)
                cname = fields[1]
                if not cname:
                    raise MPSParseError("missing column name", lineno)
                if cname not in col_index:
                    col_index[cname] = len(col_names)
                    col_names.append(cname)
                elif last_col != cname:
                    raise MPSParseError(f"column {cname!r} is not contiguous", lineno)
                last_col = cname
                j = col_index[cname]
                for rname, val in _pairs(fields, 2):
                    v = float(val)
                    if rname not in row_type:
                        raise MPSParseError(f"unknown row {rname!r}", lineno)
                    if row_type[rname] == "N":
                        if rname != obj_row:
                            continue
                        if j in cost:
                            raise MPSParseError(f"duplicate entry ({rname}, {cname})", lineno)
                        cost[j] = v
                    else:
                        key = (row_index[rname], j)
                        if key in entries:
                            raise MPSParseError(f"duplicate entry ({rname}, {cname})", lineno)
                        entries[key] = v
            elif section in ("RHS", "RANGES"):
                for rname, val in _pairs(fields, 2):
                    v = float(val)
                    if rname not in row_type:
                        raise MPSParseError(f"unknown row {rname!r}", lineno)
                    if section == "RHS" and row_type[rname] == "N":
                        if rname == obj_row:
                            obj_const = -v
                        continue
                    if section == "RANGES" and row_type[rname] == "N":
                        continue
                    target = rhs if section == "RHS" else ranges
                    i = row_index[rname]
                    if i in target:
                        raise MPSParseError(f"duplicate {section} entry for row {rname!r}", lineno)
                    target[i] = v
            elif section == "BOUNDS":
                if len(fields) < 3:
                    raise MPSParseError("malformed BOUNDS entry", lineno)
                kind = fields[0].upper()
                cname = fields[2]
                if cname not in col_index:
                    raise MPSParseError(f"unknown column {cname!r}", lineno)
                j = col_index[cname]
                val = float(fields[3]) if len(fields) > 3 and fields[3] else None
                if kind in ("BV", "LI", "UI", "SC"):
                    raise UnsupportedFeatureError(f"bound type {kind} is not supported", lineno)
                if kind in ("UP", "LO", "FX") and val is None:
                    raise MPSParseError(f"bound {kind} needs a value", lineno)
                if kind == "UP":
                    upper[j] = val
                    if val < 0 and lower.get(j, 0.0) == 0.0 and j not in lower:
                        lower[j] = -INF
                elif kind == "LO":
                    lower[j] = val
                elif kind == "FX":
                    lower[j] = upper[j] = val
                elif kind == "FR":
                    lower[j], upper[j] = -INF, INF
                elif kind == "MI":
                    lower[j] = -INF
                elif kind == "PL":
                    upper[j] = INF
                else:
                    raise MPSParseError(f"unknown bound type {kind!r}", lineno)
            elif section in ("QUADOBJ", "QMATRIX"):
                if format != "qps":
                    raise MPSParseError(f"{section} section in a plain MPS file", lineno)
                c1, c2, val = fields[1], fields[2], float(fields[3])
                if c1 not in col_index or c2 not in col_index:
                    raise MPSParseError(f"unknown column in {section}", lineno)
                i, j = col_index[c1], col_index[c2]
                if section == "QUADOBJ":
                    key = (max(i, j), min(i, j))
                    if key in quad:
                        raise MPSParseError(f"duplicate entry ({c1}, {c2})", lineno)
                    quad[key] = val
                else:
                    if (i, j) in quad:
                        raise MPSParseError(f"duplicate entry ({c1}, {c2})", lineno)
                    quad[(i, j)] = val
            elif section in ("NAME", "ENDATA"):
                raise MPSParseError(f"unexpected data in {section} section", lineno)
        except (ValueError, IndexError) as exc:
            if isinstance(exc, MPSParseError):
                raise
            raise MPSParseError(f"malformed {section} entry: {exc}", lineno) from None

    if not seen_end:
        raise MPSParseError("missing ENDATA")

    m0, n0 = len(row_index), len(col_names)
    c0 = np.zeros(n0)
    for j, v in cost.items():
        c0[j] = v
    if entries:
        r, cidx = zip(*entries.keys())
        A0 = sp.coo_matrix((list(entries.values()), (r, cidx)), shape=(m0, n0))
    else:
        A0 = sp.coo_matrix((m0, n0))
    if quad:
        qi, qj, qv = [], [], []
        for (i, j), v in quad.items():
            qi.append(i)
            qj.append(j)
            qv.append(v)
            if quad_kind == "QUADOBJ" and i != j:
                qi.append(j)
                qj.append(i)
                qv.append(v)
        Q0 = sp.coo_matrix((qv, (qi, qj)), shape=(n0, n0))
    else:
        Q0 = sp.coo_matrix((n0, n0))
    if maximize:
        c0, Q0, obj_const = -c0, -Q0, -obj_const

    types = [None] * m0
    for rname, i in row_index.items():
        types[i] = row_type[rname]
    b0 = np.zeros(m0)
    for i, v in rhs.items():
        b0[i] = v
    lo = np.zeros(n0)
    up = np.full(n0, INF)
    for j, v in lower.items():
        lo[j] = v
    for j, v in upper.items():
        up[j] = v

    prob = to_standard_form(
        A0, types, b0, c0, lo, up, Q=Q0, ranges=ranges, name=prob_name,
        obj_offset=obj_const, col_names=col_names,
    )
    return prob


def to_standard_form(
    A, row_types, b, c, lo, up, Q=None, ranges=None, name="", obj_offset=0.0, col_names=None,
) -> QPProblem:
    """Rewrite ``min c'x + 1/2 x'Qx`` over general rows/bounds into standard form.

    Row types are "E", "L", "G"; ``ranges`` maps row index to the MPS RANGES
    value.  Finite lower bounds are shifted to zero, variables with only an
    upper bound are reflected, doubly bounded variables get an extra row
    ``x' + t = up - lo`` and fixed variables become free columns pinned by
    an equality row.
    """
    A = sp.csc_matrix(A, dtype=np.float64)
    m0, n0 = A.shape
    Q = sp.csc_matrix((n0, n0)) if Q is None else sp.csc_matrix(Q, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).copy()
    c = np.asarray(c, dtype=np.float64).copy()
    lo = np.asarray(lo, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    ranges = ranges or {}

    if np.any(lo > up):
        raise ValueError("lower bound exceeds upper bound")

    shift = np.zeros(n0)
    sign = np.ones(n0)
    nonneg = np.ones(n0, dtype=bool)
    ub_cols, ub_vals = [], []
    fixed_cols, fixed_vals = [], []
    for j in range(n0):
        lj, uj = lo[j], up[j]
        if lj == uj:
            shift[j] = lj
            nonneg[j] = False
            fixed_cols.append(j)
            fixed_vals.append(0.0)
        elif np.isfinite(lj):
            shift[j] = lj
            if np.isfinite(uj):
                ub_cols.append(j)
                ub_vals.append(uj - lj)
        elif np.isfinite(uj):
            shift[j] = uj
            sign[j] = -1.0
        else:
            nonneg[j] = False

    # x = shift + sign * x'
    D = sp.diags(sign)
    Qs = (D @ Q @ D).tocsc()
    obj_offset = float(obj_offset + c @ shift + 0.5 * shift @ (Q @ shift))
    c = sign * (c + Q @ shift)
    b = b - A @ shift
    A = (A @ D).tocsc()

    # inequality rows -> slack columns, ranged rows -> slack + bound row
    slack_rows, slack_vals = [], []
    extra_rows = []  # (slack column offset, rhs)
    n_slack = 0
    slack_cols_data = []
    for i, kind in enumerate(row_types):
        R = ranges.get(i)
        if kind == "E" and R is None:
            continue
        if kind == "E":
            lo_i, hi_i = (b[i], b[i] + abs(R)) if R >= 0 else (b[i] - abs(R), b[i])
        elif kind == "L":
            lo_i, hi_i = (b[i] - abs(R), b[i]) if R is not None else (-INF, b[i])
        elif kind == "G":
            lo_i, hi_i = (b[i], b[i] + abs(R)) if R is not None else (b[i], INF)
        else:
            raise ValueError(f"bad row type {kind!r}")
        if np.isfinite(lo_i):
            # a'x - s = lo, s >= 0 (and s <= hi - lo if ranged)
            b[i] = lo_i
            slack_cols_data.append((i, -1.0))
            if np.isfinite(hi_i):
                extra_rows.append((n_slack, hi_i - lo_i))
        else:
            b[i] = hi_i
            slack_cols_data.append((i, 1.0))
        n_slack += 1

    n1 = n0 + n_slack
    S = sp.coo_matrix(
        ([v for _, v in slack_cols_data], ([i for i, _ in slack_cols_data], list(range(n_slack)))),
        shape=(m0, n_slack),
    )
    blocks_A = [A, S.tocsc()]
    A1 = sp.hstack(blocks_A).tocsc()
    c1 = np.concatenate([c, np.zeros(n_slack)])
    nonneg1 = np.concatenate([nonneg, np.ones(n_slack, dtype=bool)])

    # upper-bound rows: x'_j + t = u_j - l_j and ranged slacks s + t = hi - lo
    bound_specs = [(j, v) for j, v in zip(ub_cols, ub_vals)]
    bound_specs += [(n0 + k, v) for k, v in extra_rows]
    n_t = len(bound_specs)
    rows_extra = []
    rhs_extra = []
    for r, (j, v) in enumerate(bound_specs):
        rows_extra.append((r, j, 1.0))
        rows_extra.append((r, n1 + r, 1.0))
        rhs_extra.append(v)
    for r, (j, v) in enumerate(zip(fixed_cols, fixed_vals)):
        rows_extra.append((n_t + r, j, 1.0))
        rhs_extra.append(v)
    n_extra_rows = n_t + len(fixed_cols)
    n2 = n1 + n_t
    A1 = sp.csc_matrix((A1.data, A1.indices, A1.indptr), shape=(m0, n1))
    A1 = sp.hstack([A1, sp.csc_matrix((m0, n_t))]).tocsc()
    if n_extra_rows:
        rr, cc, vv = zip(*rows_extra)
        B = sp.coo_matrix((vv, (rr, cc)), shape=(n_extra_rows, n2))
        A2 = sp.vstack([A1, B]).tocsc()
    else:
        A2 = A1
    b2 = np.concatenate([b, np.asarray(rhs_extra, dtype=np.float64)])
    c2 = np.concatenate([c1, np.zeros(n_t)])
    nonneg2 = np.concatenate([nonneg1, np.ones(n_t, dtype=bool)])
    Q2 = sp.block_diag([Qs, sp.csc_matrix((n2 - n0, n2 - n0))]).tocsc() if n2 > n0 else Qs
    shift2 = np.concatenate([shift, np.zeros(n2 - n0)])
    sign2 = np.concatenate([sign, np.ones(n2 - n0)])

    return QPProblem(
        Q=Q2, A=A2, b=b2, c=c2, nonneg=nonneg2, name=name, obj_offset=obj_offset,
        shift=shift2, sign=sign2, n_orig=n0, col_names=col_names,
    )


def read_problem(path, format: str | None = None) -> QPProblem:
    """Read a .mps/.qps/.json problem file (gzip allowed for MPS/QPS)."""
    import gzip
    import os

    path = os.fspath(path)
    base = path[:-3] if path.endswith(".gz") else path
    ext = os.path.splitext(base)[1].lower()
    stem = os.path.splitext(os.path.basename(base))[0]
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rt") as fh:
        text = fh.read()
    if format is None:
        format = {".qps": "qps", ".json": "json"}.get(ext, "mps")
    if format == "json":
        return problem_from_json(text)
    if format == "mps" and any(h in text for h in ("\nQUADOBJ", "\nQMATRIX", "\nQSECTION")):
        format = "qps"
    prob = parse_mps(text, format=format)
    if not prob.name:
        prob.name = stem
    return prob


# ---------------------------------------------------------------------------
# MPS writing


def _fmt_value(v: float) -> str:
    s = repr(float(v))
    if s.endswith(".0"):
        s = s[:-2]
    return s


def _data_line(code: str, name1: str, name2: str, value: float) -> str:
    return f" {code:<2} {name1:<8}  {name2:<8}  {_fmt_value(value):>12}"


def write_mps_general(
    name, c, A, row_types, rhs, lo=None, up=None, Q=None, ranges=None,
    row_names=None, col_names=None, obj_const=0.0,
) -> str:
    """Serialize a general-form problem as fixed-format MPS/QPS text.

    Values are written with full precision (``repr``), so long values spill
    past the 12-character field; the reader accepts such lines.
    """
    A = sp.csc_matrix(A)
    m, n = A.shape
    c = np.asarray(c, dtype=np.float64)
    lo = np.zeros(n) if lo is None else np.asarray(lo, dtype=np.float64)
    up = np.full(n, INF) if up is None else np.asarray(up, dtype=np.float64)
    row_names = row_names or [f"R{i + 1}" for i in range(m)]
    col_names = col_names or [f"C{j + 1}" for j in range(n)]
    out = [f"NAME          {name}", "ROWS", " N  OBJ"]
    for i in range(m):
        out.append(f" {row_types[i]}  {row_names[i]}")
    out.append("COLUMNS")
    A.sort_indices()
    for j in range(n):
        # an empty column still needs one entry to be declared
        if c[j] != 0 or A.indptr[j] == A.indptr[j + 1]:
            out.append(_data_line("", col_names[j], "OBJ", c[j]))
        for p in range(A.indptr[j], A.indptr[j + 1]):
            out.append(_data_line("", col_names[j], row_names[A.indices[p]], A.data[p]))
    out.append("RHS")
    rhs = np.asarray(rhs, dtype=np.float64)
    if obj_const:
        out.append(_data_line("", "RHS", "OBJ", -obj_const))
    for i in range(m):
        if rhs[i] != 0:
            out.append(_data_line("", "RHS", row_names[i], rhs[i]))
    if ranges:
        out.append("RANGES")
        for i, v in sorted(ranges.items()):
            out.append(_data_line("", "RNG", row_names[i], v))
    bl = []
    for j in range(n):
        lj, uj = lo[j], up[j]
        if lj == uj:
            bl.append(_data_line("FX", "BND", col_names[j], lj))
        elif lj == -INF and uj == INF:
            bl.append(f" FR BND       {col_names[j]}")
        else:
            if lj == -INF:
                bl.append(f" MI BND       {col_names[j]}")
            elif lj != 0:
                bl.append(_data_line("LO", "BND", col_names[j], lj))
            if uj != INF:
                bl.append(_data_line("UP", "BND", col_names[j], uj))
    if bl:
        out.append("BOUNDS")
        out.extend(bl)
    if Q is not None:
        Ql = sp.tril(sp.csc_matrix(Q)).tocoo()
        if Ql.nnz:
            out.append("QUADOBJ")
            order = np.lexsort((Ql.row, Ql.col))
            for k in order:
                out.append(_data_line("", col_names[Ql.col[k]], col_names[Ql.row[k]], Ql.data[k]))
    out.append("ENDATA")
    return "\n".join(out) + "\n"


def write_mps(prob: QPProblem) -> str:
    """Serialize a standard-form problem (equality rows, x[I] >= 0, x[F] free)."""
    lo = np.where(prob.nonneg, 0.0, -INF)
    up = np.full(prob.n, INF)
    return write_mps_general(
        prob.name or "PROBLEM", prob.c, prob.A, ["E"] * prob.m, prob.b, lo, up,
        Q=prob.Q if prob.Q.nnz else None,
    )


# ---------------------------------------------------------------------------
# presolve and scaling


def remove_empty_rows(prob: QPProblem) -> QPProblem:
    """Drop all-zero rows with b_i = 0; raise if one has b_i != 0."""
    counts = np.diff(prob.A.tocsr().indptr)
    empty = counts == 0
    if not empty.any():
        return prob
    if np.any(prob.b[empty] != 0):
        bad = np.flatnonzero(empty & (prob.b != 0))
        raise TriviallyInfeasibleError(f"empty row(s) {bad.tolist()} with nonzero right-hand side")
    keep = ~empty
    return prob.replace(A=prob.A.tocsr()[keep].tocsc(), b=prob.b[keep], row_scaling=prob.row_scaling[keep])


def is_well_scaled(A) -> bool:
    vals = np.abs(sp.csc_matrix(A).data)
    vals = vals[vals > 0]
    if vals.size == 0:
        return True
    return bool(vals.max() < 10 and vals.min() > 0.1)


def geometric_row_scaling(prob: QPProblem) -> QPProblem:
    """Scale rows i of A and b by 1/sqrt(max_j |a_ij| * min_{a_ij != 0} |a_ij|).

    Leaves the problem untouched (scaling factors 1) when every nonzero of A
    lies strictly between 0.1 and 10.  The applied factors are multiplied into
    ``row_scaling``.
    """
    if is_well_scaled(prob.A):
        return prob.replace(row_scaling=np.ones(prob.m) * prob.row_scaling)
    R = abs(prob.A.tocsr())
    if np.any(np.diff(R.indptr) == 0):
        raise ValueError("geometric scaling requires A without empty rows")
    rmax = R.max(axis=1).toarray().ravel()
    # min over stored nonzeros per row
    rmin = np.minimum.reduceat(R.data, R.indptr[:-1])
    d = 1.0 / np.sqrt(rmax * rmin)
    A = (sp.diags(d) @ prob.A).tocsc()
    return prob.replace(A=A, b=d * prob.b, row_scaling=prob.row_scaling * d)


# ---------------------------------------------------------------------------
# JSON dump


def problem_to_json(prob: QPProblem) -> str:
    def trip(M):
        M = M.tocoo()
        return {"shape": list(M.shape), "row": M.row.tolist(), "col": M.col.tolist(), "val": M.data.tolist()}

    return json.dumps(
        {
            "name": prob.name,
            "Q": trip(prob.Q),
            "A": trip(prob.A),
            "b": prob.b.tolist(),
            "c": prob.c.tolist(),
            "I": prob.I.tolist(),
            "F": prob.F.tolist(),
            "obj_offset": prob.obj_offset,
        }
    )


def problem_from_json(text: str) -> QPProblem:
    d = json.loads(text)

    def untrip(t):
        return sp.coo_matrix((t["val"], (t["row"], t["col"])), shape=tuple(t["shape"]))

    A = untrip(d["A"])
    n = A.shape[1]
    nonneg = np.zeros(n, dtype=bool)
    nonneg[np.asarray(d["I"], dtype=int)] = True
    if set(d["I"]) & set(d["F"]) or len(d["I"]) + len(d["F"]) != n:
        raise ValueError("I and F must partition the columns")
    return QPProblem(
        Q=untrip(d["Q"]), A=A, b=d["b"], c=d["c"], nonneg=nonneg,
        name=d.get("name", ""), obj_offset=d.get("obj_offset", 0.0),
    )
