"""Mean and covariance of window-averaged exposures.

Subject ``i`` is exposed over the time set ``E_i`` (``e_i = |E_i|``).  With
predictions independent across time, the averaged exposure has mean
``m_bar_i = mean_{t in E_i} m_i^(t)`` and covariance

    S_bar = D (sum_t S^(t) * M^(t)) D,   D = diag(1 / e_i),

where ``M^(t)_ij = 1`` iff ``t`` lies in both windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyWindow, InvalidParameter
from .exposure import summarize

__all__ = [
    "ExposureWindows",
    "mask_matrix",
    "averaged_mean",
    "averaged_covariance",
    "covariances_from_draws",
]


@dataclass(frozen=True)
class ExposureWindows:
    """Membership matrix ``member[i, t]`` over ``T`` time points (0-based ``t``)."""

    member: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.member, dtype=bool)
        if m.ndim != 2:
            raise InvalidParameter("membership must be a (subjects, T) matrix")
        empty = np.flatnonzero(~m.any(axis=1))
        if empty.size:
            raise EmptyWindow(f"subjects {empty.tolist()} have empty exposure windows")
        object.__setattr__(self, "member", m)

    @property
    def n(self) -> int:
        return self.member.shape[0]

    @property
    def T(self) -> int:
        return self.member.shape[1]

    @property
    def sizes(self) -> np.ndarray:
        return self.member.sum(axis=1)

    def sets(self) -> list[set[int]]:
        return [set(np.flatnonzero(row).tolist()) for row in self.member]

    @classmethod
    def from_sets(cls, sets, T: int) -> "ExposureWindows":
        member = np.zeros((len(sets), T), dtype=bool)
        for i, s in enumerate(sets):
            idx = np.asarray(sorted(s), dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= T):
                raise EmptyWindow(f"subject {i}: window reaches outside 0..{T - 1}")
            member[i, idx] = True
        return cls(member)

    @classmethod
    def from_ranges(cls, starts, ends, T: int, base: int = 1) -> "ExposureWindows":
        """Inclusive integer ranges ``[start, end]`` on times ``base .. base + T - 1``."""
        starts = np.asarray(starts, dtype=np.int64) - base
        ends = np.asarray(ends, dtype=np.int64) - base
        if starts.shape != ends.shape:
            raise DimensionMismatch("start and end vectors differ in length")
        bad = np.flatnonzero((ends < starts) | (starts < 0) | (ends >= T))
        if bad.size:
            raise EmptyWindow(f"subjects {bad.tolist()} have empty or out-of-range windows")
        t = np.arange(T)
        return cls((t[None, :] >= starts[:, None]) & (t[None, :] <= ends[:, None]))


def mask_matrix(windows: ExposureWindows, t: int) -> np.ndarray:
    """``M^(t)``: 1 where both subjects are exposed at time ``t``."""
    col = windows.member[:, t].astype(np.float64)
    return np.outer(col, col)


def _stack(per_time, n, T, what):
    arr = np.asarray(per_time, dtype=np.float64)
    if arr.shape[0] != T:
        raise DimensionMismatch(f"{what}: got {arr.shape[0]} time points, windows cover {T}")
    if arr.shape[1] != n:
        raise DimensionMismatch(f"{what}: got {arr.shape[1]} subjects, windows have {n}")
    return arr


def averaged_mean(means, windows: ExposureWindows) -> np.ndarray:
    """``means`` has shape ``(T, n)``; returns the window averages, shape ``(n,)``."""
    m = _stack(means, windows.n, windows.T, "means")
    return np.sum(m.T * windows.member, axis=1) / windows.sizes


def averaged_covariance(covs, windows: ExposureWindows) -> np.ndarray:
    """``covs`` has shape ``(T, n, n)``; returns ``S_bar``, shape ``(n, n)``."""
    S = _stack(covs, windows.n, windows.T, "covariances")
    if S.ndim != 3 or S.shape[2] != windows.n:
        raise DimensionMismatch("covariances must be (T, n, n)")
    acc = np.zeros((windows.n, windows.n))
    for t in range(windows.T):
        col = windows.member[:, t]
        if col.any():
            acc += S[t] * mask_matrix(windows, t)
    inv = 1.0 / windows.sizes
    out = acc * inv[:, None] * inv[None, :]
    return 0.5 * (out + out.T)


def covariances_from_draws(draws) -> tuple[np.ndarray, np.ndarray]:
    """Per-time sample means and covariances from draws of shape ``(T, N, n)``."""
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim != 3:
        raise DimensionMismatch("draws must be (T, N, n)")
    summaries = [summarize(d) for d in draws]
    return (np.stack([s.mean for s in summaries]), np.stack([s.cov for s in summaries]))
