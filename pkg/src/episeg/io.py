"""Reading and writing series files and JSON/CSV artifacts.

A series file is a CSV with header ``date,cumulative``.  The metadata keys
``population`` and ``initial_count`` come either from leading comment lines
(``# population: 200000``) or from a sidecar ``<name>.meta.json``; comment
lines win when both are present.  The date column is an opaque label and
may be left empty on every row.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .core_model import EpidemicSeries

SERIES_HEADER = ("date", "cumulative")
META_KEYS = ("population", "initial_count")


class SeriesFormatError(ValueError):
    """A malformed series file.  ``row`` is the 1-based data row (0 for the
    header or metadata) and ``column`` the offending column name, if any."""

    def __init__(self, message: str, row: int = 0, column: str | None = None):
        where = f"row {row}" if row else "header"
        if column:
            where += f", column '{column}'"
        super().__init__(f"{where}: {message}")
        self.row = row
        self.column = column


def meta_path_for(path: Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _parse_meta_value(key: str, raw: str) -> int:
    try:
        value = float(raw)
    except ValueError:
        raise SeriesFormatError(f"metadata '{key}' is not a number: {raw!r}", column=key) from None
    if not value.is_integer():
        raise SeriesFormatError(f"metadata '{key}' must be an integer", column=key)
    return int(value)


def load_series(path, meta_path=None) -> EpidemicSeries:
    """Read and validate a series file; every error names its data row."""
    path = Path(path)
    meta: dict[str, int] = {}
    sidecar = Path(meta_path) if meta_path is not None else meta_path_for(path)
    if sidecar.exists():
        with open(sidecar) as fh:
            raw = json.load(fh)
        for key in META_KEYS:
            if key in raw:
                meta[key] = _parse_meta_value(key, str(raw[key]))
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        stripped = line.strip()
        if not body and stripped.startswith("#"):
            key, sep, value = stripped.lstrip("#").partition(":")
            key = key.strip()
            if sep and key in META_KEYS:
                meta[key] = _parse_meta_value(key, value.strip())
            continue
        if stripped:
            body.append(line)
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise SeriesFormatError(f"missing metadata {', '.join(missing)}")
    if not body:
        raise SeriesFormatError("file has no header")
    reader = csv.reader(body)
    header = tuple(h.strip() for h in next(reader))
    if header != SERIES_HEADER:
        raise SeriesFormatError(f"expected header {','.join(SERIES_HEADER)}, got {','.join(header)}")
    population, initial = meta["population"], meta["initial_count"]
    if population <= 0:
        raise SeriesFormatError("population must be positive", column="population")
    if initial < 0:
        raise SeriesFormatError("initial_count must be nonnegative", column="initial_count")
    dates: list[str] = []
    cum: list[int] = []
    prev = initial
    for row, fields in enumerate(reader, start=1):
        if len(fields) != 2:
            raise SeriesFormatError(f"expected 2 fields, got {len(fields)}", row)
        date, raw = fields[0].strip(), fields[1].strip()
        try:
            value = float(raw)
        except ValueError:
            raise SeriesFormatError(f"not a number: {raw!r}", row, "cumulative") from None
        if not value.is_integer() or value < 0:
            raise SeriesFormatError(f"not a nonnegative integer: {raw!r}", row, "cumulative")
        value = int(value)
        if value < prev:
            raise SeriesFormatError(
                f"cumulative count decreases ({value} < {prev})", row, "cumulative"
            )
        if value > population:
            raise SeriesFormatError(
                f"cumulative count {value} exceeds population {population}", row, "cumulative"
            )
        dates.append(date)
        cum.append(value)
        prev = value
    if not cum:
        raise SeriesFormatError("file has no data rows")
    has_dates = [bool(d) for d in dates]
    if any(has_dates) and not all(has_dates):
        row = has_dates.index(False) + 1
        raise SeriesFormatError("date is empty while other rows have dates", row, "date")
    return EpidemicSeries(initial, np.array(cum), population, tuple(dates) if all(has_dates) else None)


def write_series(series: EpidemicSeries, path) -> None:
    path = Path(path)
    dates = series.dates if series.dates is not None else ("",) * series.T
    with open(path, "w", newline="") as fh:
        fh.write(f"# population: {series.population}\n")
        fh.write(f"# initial_count: {series.initial_count}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_HEADER)
        for d, c in zip(dates, series.cumulative):
            writer.writerow((d, int(c)))


# ---------------------------------------------------------------------------
# JSON artifacts
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_QUANTS = {"type": "array", "items": _NUM}

SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["mode", "seed", "config", "T", "map", "ppi", "changepoints", "m_posterior"],
    "properties": {
        "mode": {"enum": ["fit-manual", "fit-auto", "forecast"]},
        "seed": {"type": "integer", "minimum": 0},
        "config": {"type": "object"},
        "T": {"type": "integer", "minimum": 1},
        "n_samples": _INT,
        "map": {
            "type": "object",
            "required": ["changepoints", "segments", "dispersion"],
            "properties": {
                "changepoints": {"type": "array", "items": _INT},
                "segments": {"type": "array", "items": {"type": "object"}},
                "dispersion": _NUM,
                "log_lik": _NUM,
            },
        },
        "ppi": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "changepoints": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["time", "lower", "upper"],
                "properties": {"time": _INT, "lower": _INT, "upper": _INT, "ppi": _NUM},
            },
        },
        "param_quantiles": {
            "type": "object",
            "required": ["probs", "segment_count", "segments", "dispersion"],
            "properties": {
                "probs": _QUANTS,
                "segment_count": _INT,
                "segments": {"type": "array"},
                "dispersion": _QUANTS,
            },
        },
        "m_posterior": {
            "type": "object",
            "patternProperties": {"^[0-9]+$": {"type": "number", "minimum": 0, "maximum": 1}},
            "additionalProperties": False,
        },
        "acceptance": {"type": "object"},
        "forecast": {
            "type": "object",
            "required": ["horizon", "mean", "lower", "upper"],
            "properties": {
                "horizon": _INT,
                "mean": _QUANTS,
                "lower": _QUANTS,
                "upper": _QUANTS,
                "amape": _NUM,
            },
        },
    },
}

GROUND_TRUTH_SCHEMA = {
    "type": "object",
    "required": ["model", "scenario", "replicates"],
    "properties": {
        "model": {"enum": ["glc", "sir"]},
        "scenario": {"type": "object"},
        "replicates": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["file", "seed", "changepoints"],
                "properties": {
                    "file": {"type": "string"},
                    "seed": _INT,
                    "changepoints": {"type": "array", "items": _INT},
                },
            },
        },
    },
}

TRUTH_SIDECAR_SCHEMA = {
    "type": "object",
    "required": ["model", "seed", "T", "changepoints", "scenario"],
    "properties": {
        "model": {"enum": ["glc", "sir"]},
        "seed": _INT,
        "T": _INT,
        "changepoints": {"type": "array", "items": _INT},
        "scenario": {"type": "object"},
    },
}

EVALUATION_SCHEMA = {
    "type": "object",
    "required": ["T", "truth_changepoints", "estimate_changepoints", "metrics"],
    "properties": {
        "T": _INT,
        "truth_changepoints": {"type": "array", "items": _INT},
        "estimate_changepoints": {"type": "array", "items": _INT},
        "metrics": {
            "type": "object",
            "required": ["ari", "f_measure", "mutual_information", "nvi"],
            "additionalProperties": _NUM,
        },
    },
}

ERROR_SCHEMA = {
    "type": "object",
    "required": ["error", "message"],
    "properties": {"error": {"type": "string"}, "message": {"type": "string"}},
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "input": {"type": "string"},
        "out": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "m": {"type": "integer", "minimum": 1},
        "auto": {"type": "boolean"},
        "iterations": {"type": "integer", "minimum": 1},
        "burn_in": {"type": "integer", "minimum": 0},
        "horizon": {"type": "integer", "minimum": 1},
        "holdout": {"type": "boolean"},
        "chains": {"type": "integer", "minimum": 1},
        "emit_trace": {"type": "boolean"},
        "model": {"enum": ["glc", "sir"]},
        "replicates": {"type": "integer", "minimum": 1},
        "truth": {"type": "string"},
        "estimate": {"type": "string"},
        "prior": {"type": "object"},
        "sampler": {"type": "object"},
        "scenario": {"type": "object"},
    },
}


def to_jsonable(obj):
    """Convert numpy scalars/arrays and tuples to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if not math.isfinite(value):
            raise ValueError("non-finite number in artifact")
        return value
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    """Deterministic serialisation: sorted keys, fixed indent, trailing newline."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj, schema: dict | None = None) -> None:
    data = to_jsonable(obj)
    if schema is not None:
        jsonschema.validate(data, schema)
    Path(path).write_text(dumps_json(data))


def read_json(path, schema: dict | None = None):
    with open(path) as fh:
        data = json.load(fh)
    if schema is not None:
        jsonschema.validate(data, schema)
    return data


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if not math.isfinite(value):
            raise ValueError("non-finite number in artifact")
        return repr(float(value))
    return str(value)


def write_csv(path, header: tuple, rows) -> None:
    """Write a CSV artifact, checking that every row matches the header width."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(rows, start=1):
            if len(row) != len(header):
                raise ValueError(f"row {i} has {len(row)} fields, header has {len(header)}")
            writer.writerow([_fmt(v) for v in row])
