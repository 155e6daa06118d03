"""Vecchia sparse surrogates of a dense multivariate normal.

A :class:`ConditioningPlan` fixes an ordering of the sites and, for each site,
a set of earlier sites it is conditioned on.  Truncating the sequential
conditionals of ``N(m, S)`` to those sets gives a Gaussian with the same mean
and a sparse precision ``Q = U U^T``; ``U`` is upper triangular in the plan's
ordering with one off-diagonal entry per conditioning-set member.

Indices inside a plan (``neighbors``, the factor ``U``, :func:`moralize`) refer
to positions in the ordering; :meth:`VecchiaSurrogate.precision` maps back to
the caller's original site order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import DimensionMismatch, EmptyInput, InvalidParameter, NotPositiveDefinite
from .linalg import SparseUpperFactor, dense_cholesky

__all__ = [
    "ConditioningPlan",
    "VecchiaSurrogate",
    "coordinate_order",
    "build_plan",
    "full_plan",
    "plan_from_sets",
    "build_surrogate",
    "kl_divergence",
    "moralize",
]


@dataclass(frozen=True)
class ConditioningPlan:
    """Ordering plus conditioning sets.

    Attributes
    ----------
    order : (n,) int array
        ``order[i]`` is the original index of the i-th site in the ordering.
    neighbors : (n, k) int array
        Row ``i`` lists the ordering positions (all ``< i``, ascending) that
        site ``i`` conditions on, padded with ``-1``.
    k : int
        Maximum conditioning-set size.
    """

    order: np.ndarray
    neighbors: np.ndarray
    k: int

    def __post_init__(self):
        n = self.order.size
        if self.neighbors.shape != (n, self.k):
            raise DimensionMismatch("neighbors must have shape (n, k)")
        for i, row in enumerate(self.neighbors):
            s = row[row >= 0]
            if s.size and (s.max() >= i or np.any(np.diff(s) <= 0)):
                raise InvalidParameter(f"conditioning set of position {i} is not a sorted "
                                       "subset of its predecessors")

    @property
    def n(self) -> int:
        return self.order.size

    @property
    def sizes(self) -> np.ndarray:
        return np.sum(self.neighbors >= 0, axis=1)

    def sets(self) -> list[np.ndarray]:
        return [row[row >= 0] for row in self.neighbors]

    def contains(self, other: "ConditioningPlan") -> bool:
        """True when every conditioning set of ``other`` is a subset of ours."""
        if not np.array_equal(self.order, other.order):
            return False
        return all(np.isin(b, a).all() for a, b in zip(self.sets(), other.sets()))


def coordinate_order(locations) -> np.ndarray:
    """Sort by first coordinate, then second, then original index."""
    locs = np.asarray(locations, dtype=np.float64)
    if locs.ndim == 1:
        locs = locs[:, None]
    keys = [np.arange(locs.shape[0])] + [locs[:, j] for j in range(locs.shape[1] - 1, -1, -1)]
    return np.lexsort(keys).astype(np.int64)


@njit(cache=True)
def _knn_predecessors(x, k):
    # For each position i: the k nearest among 0..i-1; equal distances keep
    # the smaller position.  Returned rows are sorted ascending by position.
    n, dim = x.shape
    out = np.full((n, k), -1, dtype=np.int64)
    best_d = np.empty(k)
    best_j = np.empty(k, dtype=np.int64)
    for i in range(1, n):
        cnt = 0
        for j in range(i):
            d = 0.0
            for c in range(dim):
                t = x[i, c] - x[j, c]
                d += t * t
            if cnt == k and not d < best_d[k - 1]:
                continue
            pos = cnt if cnt < k else k - 1
            while pos > 0 and d < best_d[pos - 1]:
                if pos < k:
                    best_d[pos] = best_d[pos - 1]
                    best_j[pos] = best_j[pos - 1]
                pos -= 1
            best_d[pos] = d
            best_j[pos] = j
            if cnt < k:
                cnt += 1
        sel = np.sort(best_j[:cnt])
        for t in range(cnt):
            out[i, t] = sel[t]
    return out


def build_plan(locations, k: int, ordering="coordinate") -> ConditioningPlan:
    """Ordering plus k-nearest-predecessor conditioning sets.

    ``ordering`` is ``"coordinate"``, ``"given"`` (keep input order) or an
    explicit permutation.  ``k = 0`` gives empty sets everywhere.
    """
    locs = np.asarray(locations, dtype=np.float64)
    if locs.ndim == 1:
        locs = locs[:, None]
    n = locs.shape[0]
    if n == 0:
        raise EmptyInput("no locations")
    if k < 0:
        raise InvalidParameter("k must be non-negative")
    if isinstance(ordering, str):
        if ordering == "coordinate":
            order = coordinate_order(locs)
        elif ordering == "given":
            order = np.arange(n, dtype=np.int64)
        else:
            raise InvalidParameter(f"unknown ordering policy {ordering!r}")
    else:
        order = np.asarray(ordering, dtype=np.int64)
        if not np.array_equal(np.sort(order), np.arange(n)):
            raise InvalidParameter("ordering must be a permutation")

    _, counts = np.unique(locs, axis=0, return_counts=True)
    if np.any(counts > 1):
        warnings.warn(f"{int(np.sum(counts - 1))} duplicate location(s); the covariance "
                      "will be singular at duplicated sites", stacklevel=2)

    k_eff = min(int(k), n - 1)
    if k_eff == 0:
        return ConditioningPlan(order, np.full((n, int(k)), -1, dtype=np.int64), int(k))
    nb = _knn_predecessors(np.ascontiguousarray(locs[order]), k_eff)
    if k_eff < k:
        nb = np.hstack([nb, np.full((n, k - k_eff), -1, dtype=np.int64)])
    return ConditioningPlan(order, nb, int(k))


def full_plan(n: int, order=None) -> ConditioningPlan:
    """Every site conditions on all of its predecessors (exact factorization)."""
    order = np.arange(n, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
    k = max(n - 1, 0)
    nb = np.full((n, k), -1, dtype=np.int64)
    for i in range(1, n):
        nb[i, :i] = np.arange(i)
    return ConditioningPlan(order, nb, k)


def plan_from_sets(sets, order=None) -> ConditioningPlan:
    """Plan from explicit conditioning sets given as ordering positions."""
    n = len(sets)
    order = np.arange(n, dtype=np.int64) if order is None else np.asarray(order, dtype=np.int64)
    k = max((len(s) for s in sets), default=0)
    nb = np.full((n, k), -1, dtype=np.int64)
    for i, s in enumerate(sets):
        s = np.unique(np.asarray(s, dtype=np.int64))
        nb[i, :s.size] = s
    return ConditioningPlan(order, nb, k)


@dataclass(frozen=True)
class VecchiaSurrogate:
    mean: np.ndarray
    factor: SparseUpperFactor
    plan: ConditioningPlan

    @property
    def n(self) -> int:
        return self.mean.size

    def precision(self, ordered: bool = False) -> sp.csc_matrix:
        """Surrogate precision ``Q``; in original site order unless ``ordered``."""
        q = self.factor.precision()
        if ordered:
            return q
        pinv = np.empty(self.n, dtype=np.int64)
        pinv[self.plan.order] = np.arange(self.n)
        out = q[pinv][:, pinv].tocsc()
        out.sort_indices()
        return out

    def logdet_precision(self) -> float:
        return self.factor.logdet_precision()

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        x_ord = self.factor.sample(rng)
        x = np.empty(self.n)
        x[self.plan.order] = x_ord
        return self.mean + x


def build_surrogate(m, S, plan: ConditioningPlan, *, rtol: float = 1e-12) -> VecchiaSurrogate:
    """Factor ``U`` of the truncated-conditional approximation of ``N(m, S)``.

    For site ``i`` with conditioning set ``N``: ``b = S_NN^{-1} S_Ni``,
    ``d = S_ii - S_iN b``; column ``i`` of ``U`` is ``d^{-1/2}`` on the
    diagonal and ``-b d^{-1/2}`` on rows ``N``.
    """
    m = np.asarray(m, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    n = plan.n
    if m.shape != (n,) or S.shape != (n, n):
        raise DimensionMismatch(f"mean {m.shape} / covariance {S.shape} do not match plan size {n}")

    order = plan.order
    sizes = plan.sizes
    cond_var = np.empty(n)
    coefs = [None] * n
    for size in np.unique(sizes):
        rows = np.flatnonzero(sizes == size)
        oi = order[rows]
        if size == 0:
            cond_var[rows] = S[oi, oi]
            continue
        nb = plan.neighbors[rows, :size]
        on = order[nb]
        s_nn = S[on[:, :, None], on[:, None, :]]
        s_ni = S[on, oi[:, None]]
        try:
            b = np.linalg.solve(s_nn, s_ni[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(f"singular conditioning block: {exc}") from exc
        cond_var[rows] = S[oi, oi] - np.einsum("ij,ij->i", s_ni, b)
        for r, bi in zip(rows, b):
            coefs[r] = bi

    bad = np.flatnonzero(cond_var <= rtol * np.abs(S[order, order]))
    if bad.size:
        i = int(bad[0])
        raise NotPositiveDefinite(f"conditional variance {cond_var[i]:.3g} at site {order[i]} "
                                  "is not positive")

    scale = 1.0 / np.sqrt(cond_var)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(sizes + 1, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.int64)
    data = np.empty(indptr[-1])
    for i in range(n):
        a, z = indptr[i], indptr[i + 1]
        if sizes[i]:
            indices[a:z - 1] = plan.neighbors[i, :sizes[i]]
            data[a:z - 1] = -coefs[i] * scale[i]
        indices[z - 1] = i
        data[z - 1] = scale[i]
    U = sp.csc_matrix((data, indices, indptr), shape=(n, n))
    return VecchiaSurrogate(mean=m.copy(), factor=SparseUpperFactor(U), plan=plan)


def kl_divergence(m, S, surrogate: VecchiaSurrogate, *, logdet_S: float | None = None) -> float:
    """``KL(N(m, S) || surrogate)`` from factors; no explicit inverses.

    ``0.5 * [tr(Q S) - n - log det Q - log det S + (m - m~)^T Q (m - m~)]``.
    """
    m = np.asarray(m, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    n = surrogate.n
    if m.shape != (n,) or S.shape != (n, n):
        raise DimensionMismatch("dimension mismatch between p and surrogate")
    order = surrogate.plan.order
    q = surrogate.factor.precision().tocoo()
    trace = float(np.sum(q.data * S[order[q.row], order[q.col]]))
    if logdet_S is None:
        L = dense_cholesky(S)
        logdet_S = float(2.0 * np.sum(np.log(np.diag(L))))
    delta = (m - surrogate.mean)[order]
    quad = float(delta @ (surrogate.factor.precision() @ delta)) if np.any(delta) else 0.0
    kl = 0.5 * (trace - n - surrogate.logdet_precision() - logdet_S + quad)
    return max(kl, 0.0) if kl > -1e-9 * max(n, 1) else kl


def moralize(plan: ConditioningPlan) -> sp.csr_matrix:
    """Moral graph of the plan's DAG as a symmetric boolean adjacency (no diagonal).

    Edge ``i - j`` when one is in the other's conditioning set or both share a
    child.  This is the off-diagonal nonzero pattern of ``Q``.
    """
    rows, cols = [], []
    for i, s in enumerate(plan.sets()):
        if s.size == 0:
            continue
        rows.append(np.full(s.size, i))
        cols.append(s)
        a, b = np.meshgrid(s, s, indexing="ij")
        off = a != b
        rows.append(a[off])
        cols.append(b[off])
    n = plan.n
    if not rows:
        return sp.csr_matrix((n, n), dtype=bool)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    adj = sp.coo_matrix((np.ones(r.size, dtype=bool), (r, c)), shape=(n, n)).tocsr()
    adj = (adj + adj.T).astype(bool)
    adj.setdiag(False)
    adj.eliminate_zeros()
    return adj
