"""Run configurations for the command-line tools.

A configuration is built from an optional JSON file and then from command
line overrides.  Every field is validated when the dataclass is created;
unknown keys are rejected so a typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .chains import FIRST_STAGE_SCHEDULE, SECOND_STAGE_SCHEDULE, Schedule
from .errors import InvalidParameter, IoError, ParseError
from .health import DENSE_SIZE_LIMIT

__all__ = [
    "SCHEMA_VERSION",
    "SimulateConfig",
    "FitExposureConfig",
    "FitHealthConfig",
    "FitJointConfig",
    "BenchVecchiaConfig",
    "AvgWindowConfig",
    "CONFIG_TYPES",
    "parse_config",
    "config_to_dict",
    "config_hash",
    "canonical_json",
]

SCHEMA_VERSION = 1

_DESK_SCHEDULE = "2000,400,5"


def _schedule(value, name) -> str:
    try:
        return str(Schedule.parse(value) if isinstance(value, str) else Schedule(*value))
    except (TypeError, ValueError) as exc:
        raise InvalidParameter(f"{name}: invalid schedule {value!r}") from exc


def _positive(cfg, *names):
    for name in names:
        v = getattr(cfg, name)
        if not (isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0):
            raise InvalidParameter(f"{name} must be positive, got {v!r}")


def _nonnegative_int(cfg, *names):
    for name in names:
        v = getattr(cfg, name)
        if not (isinstance(v, int) and not isinstance(v, bool) and v >= 0):
            raise InvalidParameter(f"{name} must be a non-negative integer, got {v!r}")


def _choice(cfg, name, options):
    v = getattr(cfg, name)
    if v not in options:
        raise InvalidParameter(f"{name} must be one of {sorted(options)}, got {v!r}")


def _prior_spec(value, name="prior"):
    if value in ("plugin", "independent", "dense", "sparse:full"):
        return
    if isinstance(value, str) and value.startswith("sparse:") and value[7:].isdigit() \
            and int(value[7:]) >= 1:
        return
    raise InvalidParameter(f"{name} must be plugin|independent|sparse:<k>|dense, got {value!r}")


@dataclass
class _Base:
    schema_version: int = SCHEMA_VERSION

    def _check_version(self):
        if self.schema_version != SCHEMA_VERSION:
            raise InvalidParameter(f"schema_version {self.schema_version!r} is not supported "
                                   f"(expected {SCHEMA_VERSION})")


@dataclass
class _DpcFields:
    sigma_k: float = 0.4
    grid: Any = "default"
    m_mu: float | None = None
    s2_mu: float = 100.0
    a_G: float = 0.01
    b_G: float = 0.01
    a_W: float = 0.01
    b_W: float = 0.01

    def _check_dpc(self):
        _positive(self, "sigma_k", "s2_mu", "a_G", "b_G", "a_W", "b_W")
        if self.grid != "default":
            if not (isinstance(self.grid, list) and self.grid
                    and all(isinstance(p, (list, tuple)) and len(p) == 2 for p in self.grid)):
                raise InvalidParameter("grid must be 'default' or a list of [x, y] points")


@dataclass
class SimulateConfig(_Base):
    scenario: str = "A"
    outcome: str = "continuous"
    n_y: int = 500
    replicates: int = 50
    methods: list = field(default_factory=lambda: ["plugin", "independent", "sparse:3",
                                                   "sparse:5"])
    schedule: str = _DESK_SCHEDULE
    first_schedule: str = str(FIRST_STAGE_SCHEDULE)
    seed: int = 0
    workers: int | None = None
    out: str = "results"

    def __post_init__(self):
        self._check_version()
        _choice(self, "scenario", {"A", "B"})
        _choice(self, "outcome", {"continuous", "binary"})
        _positive(self, "n_y", "replicates")
        _nonnegative_int(self, "seed")
        if isinstance(self.methods, str):
            self.methods = [m.strip() for m in self.methods.split(",") if m.strip()]
        from .simulate import parse_method
        for m in self.methods:
            parse_method(m)
        if "dense" in self.methods and self.n_y > DENSE_SIZE_LIMIT:
            raise InvalidParameter(f"dense method refused for n_y > {DENSE_SIZE_LIMIT}")
        self.schedule = _schedule(self.schedule, "schedule")
        self.first_schedule = _schedule(self.first_schedule, "first_schedule")
        if self.workers is not None:
            _positive(self, "workers")


@dataclass
class FitExposureConfig(_Base, _DpcFields):
    data: str | None = None
    predict: str | None = None
    schedule: str = str(FIRST_STAGE_SCHEDULE)
    seed: int = 0
    draws_format: str = "npz"
    df: int = 14
    out: str = "exposure"

    def __post_init__(self):
        self._check_version()
        self._check_dpc()
        self.schedule = _schedule(self.schedule, "schedule")
        _nonnegative_int(self, "seed")
        _choice(self, "draws_format", {"npz", "csv"})
        _positive(self, "df")


@dataclass
class FitHealthConfig(_Base):
    outcome: str = "continuous"
    prior: str = "sparse:5"
    exposure_summary: str | None = None
    data: str | None = None
    schedule: str = str(SECOND_STAGE_SCHEDULE)
    seed: int = 0
    beta_var: float = 100.0
    a_Y: float = 0.01
    b_Y: float = 0.01
    jitter: float = 0.0
    force: bool = False
    frequentist: bool = False
    chain_csv: str | None = None
    out: str = "health"

    def __post_init__(self):
        self._check_version()
        _choice(self, "outcome", {"continuous", "binary"})
        _prior_spec(self.prior)
        self.schedule = _schedule(self.schedule, "schedule")
        _nonnegative_int(self, "seed")
        _positive(self, "beta_var", "a_Y", "b_Y")
        if not (isinstance(self.jitter, (int, float)) and self.jitter >= 0):
            raise InvalidParameter("jitter must be non-negative")


@dataclass
class FitJointConfig(_Base, _DpcFields):
    outcome: str = "continuous"
    exposure_data: str | None = None
    data: str | None = None
    schedule: str = str(SECOND_STAGE_SCHEDULE)
    seed: int = 0
    beta_var: float = 100.0
    a_Y: float = 0.01
    b_Y: float = 0.01
    chain_csv: str | None = None
    out: str = "joint"

    def __post_init__(self):
        self._check_version()
        self._check_dpc()
        _choice(self, "outcome", {"continuous", "binary"})
        self.schedule = _schedule(self.schedule, "schedule")
        _nonnegative_int(self, "seed")
        _positive(self, "beta_var", "a_Y", "b_Y")


@dataclass
class BenchVecchiaConfig(_Base):
    n: list = field(default_factory=lambda: [1000, 2000, 3000, 4000, 5000])
    k: list = field(default_factory=lambda: [0, 3, 5])
    replicates: int = 20
    domain: str = "2x2"
    covariance: str = "exponential"
    seed: int = 0
    samples: int = 20
    dense: bool = True
    dense_samples: int = 3
    out: str = "kl_timing.csv"

    def __post_init__(self):
        self._check_version()
        for name in ("n", "k"):
            v = getattr(self, name)
            if isinstance(v, int):
                setattr(self, name, [v])
            if not all(isinstance(x, int) and not isinstance(x, bool) for x in getattr(self, name)):
                raise InvalidParameter(f"{name} must be a list of integers")
        if not self.n or min(self.n) < 2:
            raise InvalidParameter("n values must be at least 2")
        if min(self.k) < 0:
            raise InvalidParameter("k values must be non-negative")
        _positive(self, "replicates", "samples", "dense_samples")
        _nonnegative_int(self, "seed")
        _choice(self, "covariance", {"exponential"})
        self.side  # validates the domain string

    @property
    def side(self) -> float:
        try:
            a, b = (float(v) for v in str(self.domain).lower().split("x"))
        except ValueError as exc:
            raise InvalidParameter(f"domain must look like '2x2', got {self.domain!r}") from exc
        if a != b or a <= 0:
            raise InvalidParameter("domain must be a positive square, e.g. '2x2'")
        return a


@dataclass
class AvgWindowConfig(_Base):
    windows: str | None = None
    predictions: str | None = None
    base: int = 1
    out: str = "averaged.npz"

    def __post_init__(self):
        self._check_version()
        _nonnegative_int(self, "base")


CONFIG_TYPES = {
    "simulate": SimulateConfig,
    "fit-exposure": FitExposureConfig,
    "fit-health": FitHealthConfig,
    "fit-joint": FitJointConfig,
    "bench-vecchia": BenchVecchiaConfig,
    "avg-window": AvgWindowConfig,
}


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    if not text.strip():
        return {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a JSON object", line=1)
    return data


def parse_config(kind, path=None, overrides: dict | None = None):
    """Build the configuration for subcommand ``kind`` (or a config class).

    Keys from the JSON file at ``path`` are applied first, then ``overrides``
    (``None`` values are ignored, so unset command-line flags keep the file
    or default value).
    """
    cls = CONFIG_TYPES[kind] if isinstance(kind, str) else kind
    values = _load_json(path) if path is not None else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise InvalidParameter(f"unknown config key(s): {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise InvalidParameter(str(exc)) from exc


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg) -> str:
    data = cfg if isinstance(cfg, dict) else config_to_dict(cfg)
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()
