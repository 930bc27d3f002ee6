"""Per-round metrics records, their CSV form, and plot-data emission.

Metrics files are CSV with a fixed header (``METRIC_COLUMNS``).  Per-task
lists are stored in a single cell joined by ``;``.  Floats are written with
``repr`` so that reading a file back gives bit-identical values; missing
values are empty cells.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, PMetaError

METRIC_COLUMNS = (
    "seed", "round", "algorithm", "lam",
    "pers_return_mean", "meta_return_mean", "pers_returns", "meta_returns",
    "grad_L_norm_sq", "distance", "bound_rhs", "bound_satisfied",
    "telescoping_residual", "wall_clock",
)
_DERIVED = ("pers_return_mean", "meta_return_mean")

PLOT_COLUMNS = ("series", "x", "mean", "std")
PLOT_SERIES = ("pers_return", "meta_return", "grad_L_norm_sq", "distance", "bound_rhs")


class MetricsIOError(PMetaError, OSError):
    """A metrics or plot-data file could not be written or parsed."""


@dataclass
class MetricsRecord:
    seed: int
    round: int
    algorithm: str = "pmeta"
    lam: float | None = None
    pers_returns: tuple[float, ...] = ()
    meta_returns: tuple[float, ...] = ()
    grad_L_norm_sq: float | None = None
    distance: float | None = None
    bound_rhs: float | None = None
    bound_satisfied: bool | None = None
    telescoping_residual: float | None = None
    wall_clock: float | None = None

    def __post_init__(self):
        self.pers_returns = tuple(float(x) for x in self.pers_returns)
        self.meta_returns = tuple(float(x) for x in self.meta_returns)
        for name in ("lam", "grad_L_norm_sq", "distance", "bound_rhs", "telescoping_residual", "wall_clock"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if not all(math.isfinite(x) for x in self.pers_returns + self.meta_returns):
            raise ValueError("returns must be finite")

    @property
    def pers_return_mean(self) -> float | None:
        return float(np.mean(self.pers_returns)) if self.pers_returns else None

    @property
    def meta_return_mean(self) -> float | None:
        return float(np.mean(self.meta_returns)) if self.meta_returns else None


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ";".join(repr(float(x)) for x in v)
    return str(v)


def _float(s: str) -> float | None:
    return float(s) if s != "" else None


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(";")) if s else ()


def record_to_row(rec: MetricsRecord) -> list[str]:
    return [_cell(getattr(rec, c)) for c in METRIC_COLUMNS]


def row_to_record(row: dict) -> MetricsRecord:
    return MetricsRecord(
        seed=int(row["seed"]),
        round=int(row["round"]),
        algorithm=row["algorithm"],
        lam=_float(row["lam"]),
        pers_returns=_floats(row["pers_returns"]),
        meta_returns=_floats(row["meta_returns"]),
        grad_L_norm_sq=_float(row["grad_L_norm_sq"]),
        distance=_float(row["distance"]),
        bound_rhs=_float(row["bound_rhs"]),
        bound_satisfied=None if row["bound_satisfied"] == "" else row["bound_satisfied"] == "1",
        telescoping_residual=_float(row["telescoping_residual"]),
        wall_clock=_float(row["wall_clock"]),
    )


class MetricsSink:
    """Streams records to a CSV file as they are produced."""

    def __init__(self, path):
        self.path = Path(path)
        try:
            self._fh = open(self.path, "w", newline="")
        except OSError as exc:
            raise MetricsIOError(f"cannot write metrics to {self.path}: {exc}") from exc
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(METRIC_COLUMNS)

    def __call__(self, rec: MetricsRecord):
        self._writer.writerow(record_to_row(rec))
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_metrics(records: Iterable[MetricsRecord], path) -> Path:
    with MetricsSink(path) as sink:
        for rec in records:
            sink(rec)
    return Path(path)


def read_metrics(path) -> list[MetricsRecord]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
                raise MetricsIOError(f"{path}: unexpected header {reader.fieldnames}")
            return [row_to_record(row) for row in reader]
    except OSError as exc:
        raise MetricsIOError(f"cannot read {path}: {exc}") from exc


def _series_value(rec: MetricsRecord, series: str):
    if series == "pers_return":
        return rec.pers_return_mean
    if series == "meta_return":
        return rec.meta_return_mean
    return getattr(rec, series)


def plot_rows(records: Sequence[MetricsRecord], series: Sequence[str] = PLOT_SERIES):
    """(series, round, mean, population std) over all records sharing a round."""
    if not records:
        raise EmptyInput("no records to summarise")
    grouped = defaultdict(list)
    for rec in records:
        for name in series:
            v = _series_value(rec, name)
            if v is not None:
                grouped[(name, rec.round)].append(float(v))
    order = {name: i for i, name in enumerate(series)}
    rows = []
    for (name, x), vals in sorted(grouped.items(), key=lambda kv: (order[kv[0][0]], kv[0][1])):
        arr = np.asarray(vals)
        rows.append((name, x, float(arr.mean()), float(arr.std())))
    return rows


def emit_plot_data(records: Sequence[MetricsRecord], path, series: Sequence[str] = PLOT_SERIES) -> Path:
    rows = plot_rows(records, series)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLOT_COLUMNS)
            for name, x, mean, std in rows:
                w.writerow([name, x, repr(mean), repr(std)])
    except OSError as exc:
        raise MetricsIOError(f"cannot write plot data to {path}: {exc}") from exc
    return Path(path)


def read_plot_data(path) -> list[tuple[str, int, float, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != PLOT_COLUMNS:
            raise MetricsIOError(f"{path}: unexpected header {header}")
        return [(r[0], int(r[1]), float(r[2]), float(r[3])) for r in reader]


def write_tagged(rows: Iterable[tuple[str, object]], path) -> Path:
    """Diagnostics as JSON lines, one ``{"tag": ..., ...}`` object per row."""
    with open(path, "w") as fh:
        for tag, payload in rows:
            body = asdict(payload) if hasattr(payload, "__dataclass_fields__") else dict(payload)
            fh.write(json.dumps({"tag": tag, **_jsonable(body)}, sort_keys=True) + "\n")
    return Path(path)


def read_tagged(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
