"""Dense and sparse symmetric-positive-definite linear algebra.

The sparse Cholesky here is an up-looking (row-by-row) factorization in the
style of CSparse's ``cs_chol``: a one-off symbolic analysis (fill-reducing
ordering, elimination tree, column counts) followed by numeric factorizations
that may be repeated for any matrix sharing the analysed pattern.  That split
is what makes the per-sweep draw of ``N(P^{-1} b, P^{-1})`` cheap when
``P = Q + D`` changes only on its diagonal.

Conventions: column-compressed storage, 0-based indices, float64.  For a
permutation ``perm`` the factored matrix is ``C = A[perm][:, perm] = L L^T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numba import njit

from .errors import DimensionMismatch, InvalidParameter, NotPositiveDefinite

__all__ = [
    "dense_cholesky",
    "triangular_solve",
    "log_det_from_factor",
    "SparseUpperFactor",
    "SymbolicCholesky",
    "SparseCholesky",
    "as_sparse_precision",
    "sparse_spd_factorize",
    "amd_order",
]


# ---------------------------------------------------------------------------
# dense
# ---------------------------------------------------------------------------

def _check_symmetric(a: np.ndarray, rtol: float = 1e-12) -> None:
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale and np.max(np.abs(a - a.T)) > rtol * scale:
        raise InvalidParameter("matrix is not symmetric")


def dense_cholesky(a, *, jitter: float = 0.0) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == a (+ jitter*I)``.

    No regularization is ever applied unless ``jitter`` is set explicitly.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    _check_symmetric(a)
    if jitter:
        a = a + jitter * np.eye(a.shape[0])
    try:
        return sla.cholesky(a, lower=True, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(str(exc)) from exc


# ---------------------------------------------------------------------------
# numba kernels on CSC arrays
# ---------------------------------------------------------------------------

@njit(cache=True)
def _etree(n, Cp, Ci):
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


@njit(cache=True)
def _ereach(Cp, Ci, k, parent, s, mark):
    # Pattern of row k of L (off-diagonal), topologically ordered in s[top:].
    n = s.shape[0]
    top = n
    mark[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        length = 0
        while mark[i] != k:
            s[length] = i
            length += 1
            mark[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


@njit(cache=True)
def _column_counts(n, Cp, Ci, parent):
    counts = np.ones(n, dtype=np.int64)
    s = np.empty(n, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, mark)
        for t in range(top, n):
            counts[s[t]] += 1
    return counts


@njit(cache=True)
def _chol_numeric(n, Cp, Ci, Cx, parent, Lp, Li, Lx):
    """Up-looking Cholesky.  Returns -1 on success or the failing column."""
    c = Lp[:-1].copy()
    x = np.zeros(n)
    s = np.empty(n, dtype=np.int64)
    mark = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, mark)
        x[k] = 0.0
        for p in range(Cp[k], Cp[k + 1]):
            if Ci[p] <= k:
                x[Ci[p]] = Cx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = s[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = c[i]
            c[i] += 1
            Li[p] = k
            Lx[p] = lki
        if not d > 0.0:
            return k
        p = c[k]
        c[k] += 1
        Li[p] = k
        Lx[p] = np.sqrt(d)
    return -1


@njit(cache=True)
def _lsolve(n, Lp, Li, Lx, x):
    # in place: L y = x, diagonal stored first in each column
    for j in range(n):
        x[j] /= Lx[Lp[j]]
        xj = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj


@njit(cache=True)
def _ltsolve(n, Lp, Li, Lx, x):
    # in place: L^T y = x
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            acc -= Lx[p] * x[Li[p]]
        x[j] = acc / Lx[Lp[j]]


@njit(cache=True)
def _upper_solve(n, Up, Ui, Ux, x):
    # in place: U y = x for upper-triangular CSC U, diagonal stored last
    for j in range(n - 1, -1, -1):
        x[j] /= Ux[Up[j + 1] - 1]
        xj = x[j]
        for p in range(Up[j], Up[j + 1] - 1):
            x[Ui[p]] -= Ux[p] * xj


@njit(cache=True)
def _upper_tsolve(n, Up, Ui, Ux, x):
    # in place: U^T y = x
    for j in range(n):
        acc = x[j]
        for p in range(Up[j], Up[j + 1] - 1):
            acc -= Ux[p] * x[Ui[p]]
        x[j] = acc / Ux[Up[j + 1] - 1]


# ---------------------------------------------------------------------------
# sparse types
# ---------------------------------------------------------------------------

def _canonical_csc(a) -> sp.csc_matrix:
    m = sp.csc_matrix(a, dtype=np.float64, copy=True)
    m.sum_duplicates()
    m.sort_indices()
    return m


def as_sparse_precision(p, *, check_symmetric: bool = True) -> sp.csc_matrix:
    """Canonical CSC copy of ``p`` with every diagonal entry stored explicitly.

    Storing the diagonal (even when zero) keeps the pattern of ``p + D`` equal
    to that of ``p`` for any diagonal ``D``.
    """
    m = _canonical_csc(p)
    if m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    m = _with_explicit_diagonal(m)
    if check_symmetric:
        diff = abs(m - m.T)
        scale = abs(m).max() if m.nnz else 0.0
        if diff.nnz and diff.max() > 1e-12 * max(scale, 1.0):
            raise InvalidParameter("sparse precision is not symmetric")
    return m


def _with_explicit_diagonal(m: sp.csc_matrix) -> sp.csc_matrix:
    n = m.shape[0]
    rows = m.indices
    cols = np.repeat(np.arange(n), np.diff(m.indptr))
    has = np.zeros(n, dtype=bool)
    has[rows[rows == cols]] = True
    if has.all():
        return m
    coo = m.tocoo()
    missing = np.flatnonzero(~has)
    r = np.concatenate([coo.row, missing])
    c = np.concatenate([coo.col, missing])
    v = np.concatenate([coo.data, np.zeros(missing.size)])
    out = sp.csc_matrix((v, (r, c)), shape=m.shape)
    out.sort_indices()
    return out


@dataclass(frozen=True)
class SparseUpperFactor:
    """Upper-triangular ``U`` (CSC, diagonal last in each column), ``Q = U U^T``.

    Column ``i`` holds one off-diagonal entry per member of the conditioning
    set of node ``i``.
    """

    matrix: sp.csc_matrix

    def __post_init__(self):
        u = self.matrix
        if u.shape[0] != u.shape[1]:
            raise DimensionMismatch("factor must be square")
        rows, cols = u.nonzero()
        if np.any(rows > cols):
            raise InvalidParameter("factor has entries below the diagonal")
        if np.any(self.diagonal <= 0):
            raise NotPositiveDefinite("factor diagonal must be positive")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def diagonal(self) -> np.ndarray:
        u = self.matrix
        return u.data[u.indptr[1:] - 1]

    def offdiag_counts(self) -> np.ndarray:
        return np.diff(self.matrix.indptr) - 1

    def precision(self) -> sp.csc_matrix:
        q = (self.matrix @ self.matrix.T).tocsc()
        q.sort_indices()
        return q

    def logdet_precision(self) -> float:
        return float(2.0 * np.sum(np.log(self.diagonal)))

    def solve(self, rhs, *, transpose: bool = False) -> np.ndarray:
        """Solve ``U x = rhs`` (or ``U^T x = rhs``)."""
        x = np.array(rhs, dtype=np.float64, copy=True)
        if x.shape != (self.n,):
            raise DimensionMismatch(f"rhs has shape {x.shape}, expected ({self.n},)")
        u = self.matrix
        (_upper_tsolve if transpose else _upper_solve)(self.n, u.indptr, u.indices, u.data, x)
        return x

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Zero-mean draw(s) with covariance ``Q^{-1}``: ``x = U^{-T} z``."""
        if size is None:
            return self.solve(rng.standard_normal(self.n), transpose=True)
        return np.stack([self.solve(rng.standard_normal(self.n), transpose=True)
                         for _ in range(size)])


def amd_order(a: sp.spmatrix) -> np.ndarray:
    """Approximate-minimum-degree permutation (SuiteSparse AMD via cvxopt)."""
    from cvxopt import amd, matrix, spmatrix

    coo = sp.tril(a, format="coo")
    n = a.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    A = spmatrix(matrix(np.ones(coo.nnz)),
                 matrix(coo.row.astype(np.int64), tc="i") if coo.nnz else [],
                 matrix(coo.col.astype(np.int64), tc="i") if coo.nnz else [],
                 (n, n))
    return np.asarray(amd.order(A), dtype=np.int64).ravel()


def _resolve_ordering(a: sp.csc_matrix, ordering) -> np.ndarray:
    n = a.shape[0]
    if ordering is None or (isinstance(ordering, str) and ordering == "amd"):
        return amd_order(a)
    if isinstance(ordering, str):
        if ordering == "natural":
            return np.arange(n, dtype=np.int64)
        raise InvalidParameter(f"unknown ordering {ordering!r}")
    perm = np.asarray(ordering, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise InvalidParameter("ordering must be a permutation of 0..n-1")
    return perm


@dataclass(frozen=True)
class SymbolicCholesky:
    """Ordering, elimination tree and factor pattern for a fixed sparsity pattern.

    ``factorize(values)`` takes the ``data`` array of a canonical CSC matrix
    with the analysed pattern (``pattern_indptr``/``pattern_indices``).
    """

    n: int
    perm: np.ndarray
    pinv: np.ndarray
    parent: np.ndarray
    Lp: np.ndarray
    pattern_indptr: np.ndarray
    pattern_indices: np.ndarray
    diag_positions: np.ndarray  # index of (i, i) in the source data array
    _Cp: np.ndarray = field(repr=False)
    _Ci: np.ndarray = field(repr=False)
    _src: np.ndarray = field(repr=False)  # C.data = values[_src]

    @classmethod
    def analyze(cls, a, ordering="amd") -> "SymbolicCholesky":
        a = _with_explicit_diagonal(_canonical_csc(a))
        n = a.shape[0]
        if a.shape != (n, n):
            raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
        perm = _resolve_ordering(a, ordering)
        pinv = np.empty(n, dtype=np.int64)
        pinv[perm] = np.arange(n)

        cols = np.repeat(np.arange(n), np.diff(a.indptr))
        rows = a.indices.astype(np.int64)
        r, c = pinv[rows], pinv[cols]
        keep = np.flatnonzero(r <= c)
        r, c = r[keep], c[keep]
        order = np.lexsort((r, c))
        src = keep[order]
        Ci = r[order].astype(np.int64)
        Cp = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(c, minlength=n), out=Cp[1:])

        parent = _etree(n, Cp, Ci)
        counts = _column_counts(n, Cp, Ci, parent)
        Lp = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=Lp[1:])

        diag_pos = np.flatnonzero(rows == cols)
        diag_pos = diag_pos[np.argsort(rows[diag_pos])]
        return cls(n=n, perm=perm, pinv=pinv, parent=parent, Lp=Lp,
                   pattern_indptr=a.indptr.astype(np.int64).copy(),
                   pattern_indices=a.indices.astype(np.int64).copy(),
                   diag_positions=diag_pos, _Cp=Cp, _Ci=Ci, _src=src)

    @property
    def nnz_factor(self) -> int:
        return int(self.Lp[-1])

    def matches(self, a: sp.csc_matrix) -> bool:
        return (a.shape == (self.n, self.n)
                and np.array_equal(a.indptr, self.pattern_indptr)
                and np.array_equal(a.indices, self.pattern_indices))

    def factorize(self, values) -> "SparseCholesky":
        """Numeric factorization.  ``values`` is a data array or a CSC matrix."""
        if sp.issparse(values):
            m = _with_explicit_diagonal(_canonical_csc(values))
            if not self.matches(m):
                raise DimensionMismatch("matrix pattern differs from the analysed pattern")
            values = m.data
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.pattern_indices.size,):
            raise DimensionMismatch("values length does not match analysed pattern")
        Cx = values[self._src]
        Li = np.empty(self.nnz_factor, dtype=np.int64)
        Lx = np.empty(self.nnz_factor, dtype=np.float64)
        bad = _chol_numeric(self.n, self._Cp, self._Ci, Cx, self.parent, self.Lp, Li, Lx)
        if bad >= 0:
            raise NotPositiveDefinite(
                f"non-positive pivot at permuted column {bad} (original index {self.perm[bad]})")
        return SparseCholesky(symbolic=self, Li=Li, Lx=Lx)


@dataclass(frozen=True)
class SparseCholesky:
    """Numeric factor ``A[perm][:, perm] = L L^T``; solves act on the original system."""

    symbolic: SymbolicCholesky
    Li: np.ndarray
    Lx: np.ndarray

    @property
    def n(self) -> int:
        return self.symbolic.n

    @property
    def perm(self) -> np.ndarray:
        return self.symbolic.perm

    @property
    def L(self) -> sp.csc_matrix:
        s = self.symbolic
        return sp.csc_matrix((self.Lx, self.Li, s.Lp), shape=(s.n, s.n))

    @property
    def diagonal(self) -> np.ndarray:
        return self.Lx[self.symbolic.Lp[:-1]]

    def logdet(self) -> float:
        return float(2.0 * np.sum(np.log(self.diagonal)))

    def _check(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (self.n,):
            raise DimensionMismatch(f"rhs has shape {b.shape}, expected ({self.n},)")
        return b

    def solve(self, b) -> np.ndarray:
        """``A^{-1} b`` in the original ordering."""
        b = self._check(b)
        s = self.symbolic
        y = b[s.perm].copy()
        _lsolve(s.n, s.Lp, self.Li, self.Lx, y)
        _ltsolve(s.n, s.Lp, self.Li, self.Lx, y)
        x = np.empty_like(y)
        x[s.perm] = y
        return x

    def solve_lower(self, b) -> np.ndarray:
        """``L^{-1} (P b)``: forward solve in the permuted space."""
        b = self._check(b)
        y = b[self.symbolic.perm].copy()
        _lsolve(self.n, self.symbolic.Lp, self.Li, self.Lx, y)
        return y

    def solve_upper(self, y) -> np.ndarray:
        """``P^T L^{-T} y``: backward solve, mapped back to the original order."""
        y = self._check(y).copy()
        _ltsolve(self.n, self.symbolic.Lp, self.Li, self.Lx, y)
        x = np.empty_like(y)
        x[self.symbolic.perm] = y
        return x

    def draw(self, b, z) -> np.ndarray:
        """Draw from ``N(A^{-1} b, A^{-1})`` given standard-normal ``z``."""
        y = self.solve_lower(b)
        y += self._check(z)
        return self.solve_upper(y)

    def reconstruct(self) -> np.ndarray:
        L = self.L.toarray()
        c = L @ L.T
        out = np.empty_like(c)
        p = self.symbolic.perm
        out[np.ix_(p, p)] = c
        return out


def sparse_spd_factorize(p, ordering="amd") -> SparseCholesky:
    """Symbolic analysis plus one numeric factorization of a sparse SPD matrix."""
    m = _with_explicit_diagonal(_canonical_csc(p))
    sym = SymbolicCholesky.analyze(m, ordering=ordering)
    return sym.factorize(m.data)


# ---------------------------------------------------------------------------
# solves and log-determinants
# ---------------------------------------------------------------------------

def triangular_solve(factor, rhs, side: str = "forward") -> np.ndarray:
    """Solve with a lower-triangular factor.

    ``side="forward"`` solves ``L x = rhs``; ``"backward"`` solves
    ``L^T x = rhs``.  ``factor`` is a dense array or a sparse CSC matrix whose
    columns store the diagonal first.
    """
    if side not in ("forward", "backward"):
        raise InvalidParameter(f"side must be 'forward' or 'backward', got {side!r}")
    rhs = np.asarray(rhs, dtype=np.float64)
    n = factor.shape[0]
    if factor.shape != (n, n) or rhs.shape[0] != n:
        raise DimensionMismatch(f"factor {factor.shape} incompatible with rhs {rhs.shape}")
    if sp.issparse(factor):
        L = _canonical_csc(factor)
        x = rhs.copy()
        (_lsolve if side == "forward" else _ltsolve)(n, L.indptr.astype(np.int64),
                                                     L.indices.astype(np.int64), L.data, x)
        return x
    return sla.solve_triangular(np.asarray(factor, dtype=np.float64), rhs, lower=True,
                                trans=0 if side == "forward" else 1)


def log_det_from_factor(factor) -> float:
    """Log-determinant of the matrix a factor represents: ``2 * sum(log diag)``."""
    if isinstance(factor, SparseCholesky):
        return factor.logdet()
    if isinstance(factor, SparseUpperFactor):
        return factor.logdet_precision()
    if sp.issparse(factor):
        d = factor.diagonal()
    else:
        d = np.diag(np.asarray(factor))
    return float(2.0 * np.sum(np.log(d)))
