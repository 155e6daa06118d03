"""CSV and result-file input/output.

Floats are written with ``repr`` (shortest round-tripping form), so a file
written here reads back to identical values and rewrites to identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

import numpy as np

from .config import canonical_json, config_hash, config_to_dict
from .errors import BadNumeric, IoError, MissingColumn, ParseError
from .timeavg import ExposureWindows

__all__ = [
    "Schema",
    "MONITORING",
    "PARTICIPANTS",
    "LOCATIONS",
    "SpatialField",
    "read_spatial_csv",
    "write_spatial_csv",
    "read_windows_csv",
    "METRIC_COLUMNS",
    "ResultBundle",
    "write_results",
    "read_metrics_csv",
    "write_rows_csv",
    "format_float",
    "software_version",
]


@dataclass(frozen=True)
class Schema:
    """Column layout: an id column, required numeric columns, optional ones.

    Columns whose names start with one of ``prefixes`` are collected as
    extra numeric columns in file order (e.g. covariates ``z1, z2``).
    """

    name: str
    id_column: str
    required: tuple[str, ...]
    optional: tuple[str, ...] = ()
    prefixes: tuple[str, ...] = ()


MONITORING = Schema("monitoring", "site_id", ("x", "y", "w"), optional=("t",))
PARTICIPANTS = Schema("participants", "id", ("x", "y", "y_outcome"), prefixes=("z",))
LOCATIONS = Schema("locations", "id", ("x", "y"))


@dataclass(frozen=True)
class SpatialField:
    ids: list[str]
    columns: dict[str, np.ndarray]
    schema: Schema
    duplicates: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def coords(self) -> np.ndarray:
        return np.column_stack([self.columns["x"], self.columns["y"]])

    def matrix(self, names) -> np.ndarray:
        if not names:
            return np.zeros((len(self), 0))
        return np.column_stack([self.columns[n] for n in names])

    @property
    def extra(self) -> list[str]:
        return [c for c in self.columns
                if c not in self.schema.required and c not in self.schema.optional]


def _parse_float(text, row, name) -> float:
    try:
        v = float(text)
    except ValueError:
        raise BadNumeric(f"cannot parse {text!r} as a number", row=row, field=name) from None
    if not math.isfinite(v):
        raise BadNumeric(f"non-finite value {text!r}", row=row, field=name)
    return v


def read_spatial_csv(path, schema: Schema = MONITORING) -> SpatialField:
    """Read a CSV with a header row following ``schema``.

    ``row`` in :class:`BadNumeric` is the 1-based data row (header excluded).
    Duplicate ``(x, y)`` pairs are flagged in ``duplicates`` and warned about.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        header = [h.strip() for h in header]
        missing = [c for c in (schema.id_column,) + schema.required if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}",
                                field=missing[0])
        numeric = [c for c in header if c in schema.required or c in schema.optional
                   or any(c.startswith(p) for p in schema.prefixes)]
        pos = {c: header.index(c) for c in header}
        ids, values = [], {c: [] for c in numeric}
        for row, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields, got {len(rec)}",
                                 line=row + 1)
            ids.append(rec[pos[schema.id_column]])
            for c in numeric:
                values[c].append(_parse_float(rec[pos[c]].strip(), row, c))
    cols = {c: np.asarray(v, dtype=np.float64) for c, v in values.items()}
    key = np.column_stack([cols["x"], cols["y"]]) if ids else np.zeros((0, 2))
    if "t" in cols:
        key = np.column_stack([key, cols["t"]])
    dup = np.zeros(len(ids), dtype=bool)
    if ids:
        _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        dup = counts[inverse.ravel()] > 1
        if dup.any():
            warnings.warn(f"{path}: {int(dup.sum())} rows share (x, y) locations", stacklevel=2)
    return SpatialField(ids, cols, schema, dup)


def format_float(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_spatial_csv(path, data: SpatialField) -> None:
    names = [data.schema.id_column] + list(data.columns)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for i, ident in enumerate(data.ids):
                w.writerow([ident] + [format_float(data.columns[c][i]) for c in data.columns])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_windows_csv(path, T: int, base: int = 1) -> tuple[list[str], ExposureWindows]:
    """Window file with columns ``subject_id, t_start, t_end`` (inclusive)."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in ("subject_id", "t_start", "t_end") if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}",
                                field=missing[0])
        ids, starts, ends = [], [], []
        for row, rec in enumerate(reader, start=1):
            ids.append(rec["subject_id"])
            for name, dest in (("t_start", starts), ("t_end", ends)):
                text = rec[name].strip()
                try:
                    dest.append(int(text))
                except ValueError:
                    raise BadNumeric(f"{name} must be an integer, got {text!r}",
                                     row=row, field=name) from None
    return ids, ExposureWindows.from_ranges(starts, ends, T, base=base)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

METRIC_COLUMNS = ("method", "bias", "rmse", "ci_len", "coverage_pct", "time_s")


def software_version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:  # not installed as a distribution
        return "0+unknown"


@dataclass
class ResultBundle:
    rows: list                   # MetricRow objects or dicts with METRIC_COLUMNS
    config: object               # a config dataclass or plain dict
    summary: dict = field(default_factory=dict)
    seed: int | None = None
    wall_seconds: float | None = None
    jitter: float = 0.0
    details: list | None = None


def _row_dict(row) -> dict:
    return asdict(row) if is_dataclass(row) else dict(row)


def write_rows_csv(path, rows, columns) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                d = _row_dict(row)
                w.writerow([format_float(d[c]) if isinstance(d[c], (float, np.floating))
                            else d[c] for c in columns])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    return obj


def write_results(bundle: ResultBundle, out_dir) -> dict[str, Path]:
    """Write ``metrics.csv``, ``summary.json`` and ``config.echo.json``.

    ``summary.json`` carries the SHA-256 of the canonical config echo.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    cfg = _jsonable(bundle.config if isinstance(bundle.config, dict)
                    else config_to_dict(bundle.config))
    paths = {"metrics": out / "metrics.csv", "summary": out / "summary.json",
             "config": out / "config.echo.json"}
    write_rows_csv(paths["metrics"], bundle.rows, METRIC_COLUMNS)
    if bundle.details is not None:
        paths["details"] = out / "details.csv"
        cols = list(_row_dict(bundle.details[0])) if bundle.details else ["replicate", "method"]
        write_rows_csv(paths["details"], bundle.details, cols)
    meta = {
        "config_hash": config_hash(cfg),
        "seed": bundle.seed,
        "software_version": software_version(),
        "wall_seconds": bundle.wall_seconds,
        "jitter": bundle.jitter,
        "quantile_rule": "linear",
    }
    meta.update(_jsonable(bundle.summary))
    try:
        paths["config"].write_text(canonical_json(cfg) + "\n", encoding="utf-8")
        paths["summary"].write_text(json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write results to {out}: {exc}") from exc
    return paths


def read_metrics_csv(path) -> list[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
                raise MissingColumn(f"{path}: header is {reader.fieldnames}, "
                                    f"expected {list(METRIC_COLUMNS)}")
            return [{"method": r["method"], **{c: float(r[c]) for c in METRIC_COLUMNS[1:]}}
                    for r in reader]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
