"""MCMC schedules, stored chains and their summaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSamples, InvalidParameter

__all__ = [
    "Schedule",
    "ChainOutput",
    "summarize_chain",
    "batch_means_mcse",
    "QUANTILE_RULE",
]

# numpy's default (Hyndman-Fan type 7): linear interpolation of order statistics
QUANTILE_RULE = "linear"


@dataclass(frozen=True)
class Schedule:
    """Burn-in iterations, number of kept draws and thinning interval."""

    burnin: int
    kept: int
    thin: int = 1

    def __post_init__(self):
        if self.burnin < 0 or self.kept < 1 or self.thin < 1:
            raise InvalidParameter(f"invalid schedule {self}")

    @property
    def total(self) -> int:
        return self.burnin + self.kept * self.thin

    def keep(self, it: int) -> bool:
        """Whether 0-based iteration ``it`` produces a kept draw."""
        j = it - self.burnin + 1
        return j > 0 and j % self.thin == 0

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        try:
            b, k, t = (int(v) for v in text.split(","))
        except ValueError as exc:
            raise InvalidParameter(f"schedule must be 'burnin,kept,thin', got {text!r}") from exc
        return cls(b, k, t)

    def __str__(self) -> str:
        return f"{self.burnin},{self.kept},{self.thin}"


FIRST_STAGE_SCHEDULE = Schedule(10_000, 1_000, 5)
SECOND_STAGE_SCHEDULE = Schedule(10_000, 2_000, 5)


@dataclass(frozen=True)
class ChainOutput:
    """Kept draws of a health-model chain plus run metadata."""

    names: tuple[str, ...]
    beta: np.ndarray                  # (kept, 2 + p)
    sigma2: np.ndarray | None         # (kept,) for continuous outcomes
    schedule: Schedule
    wall_seconds: float
    prior: str
    seed: int | None = None
    x: np.ndarray | None = None       # (kept, n_y) when requested
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.beta.shape[0] != self.schedule.kept:
            raise InvalidParameter("draw count does not match schedule")

    def draws(self) -> dict[str, np.ndarray]:
        out = {name: self.beta[:, j] for j, name in enumerate(self.names)}
        if self.sigma2 is not None:
            out["sigma2_y"] = self.sigma2
        return out

    @property
    def beta_x(self) -> np.ndarray:
        return self.beta[:, 1]

    def summary(self) -> dict[str, dict[str, float]]:
        return summarize_chain(self)


def summarize_chain(chain, level: float = 0.95) -> dict[str, dict[str, float]]:
    """Posterior mean, sd and central credible interval per parameter.

    Accepts a :class:`ChainOutput`, a mapping of name -> draws, or a 1-D
    array (reported under the key ``"value"``).
    """
    if isinstance(chain, ChainOutput):
        draws = chain.draws()
    elif isinstance(chain, dict):
        draws = chain
    else:
        draws = {"value": np.asarray(chain, dtype=np.float64)}
    alpha = (1.0 - level) / 2.0
    out = {}
    for name, d in draws.items():
        d = np.asarray(d, dtype=np.float64)
        if d.size < 2:
            raise InsufficientSamples(f"{name}: need at least 2 draws, got {d.size}")
        lo, hi = np.quantile(d, [alpha, 1.0 - alpha], method=QUANTILE_RULE)
        out[name] = {
            "mean": float(np.mean(d)),
            "sd": float(np.std(d, ddof=1)),
            "lower": float(lo),
            "upper": float(hi),
            "mcse": float(batch_means_mcse(d)),
        }
    return out


def batch_means_mcse(x, n_batches: int | None = None) -> float:
    """Monte Carlo standard error of the mean by non-overlapping batch means."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n < 4:
        return float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    b = n_batches or max(2, int(np.sqrt(n)))
    size = n // b
    means = x[: b * size].reshape(b, size).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(b))
