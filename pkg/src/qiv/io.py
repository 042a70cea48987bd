"""CSV ingestion/export and JSON report files."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .design import DataError, Dataset

SCHEMA_VERSION = "1"


@dataclass(frozen=True)
class Roles:
    outcome: str = "y"
    treatment: str = "a"
    qiv: tuple[str, ...] = ("z",)
    covariates: tuple[str, ...] | None = None  # None: every remaining column

    def __post_init__(self):
        named = [self.outcome, self.treatment, *self.qiv, *(self.covariates or ())]
        if len(set(named)) != len(named):
            raise ValueError("column roles must be disjoint")
        if not self.qiv:
            raise ValueError("at least one QIV column is required")


def _parse(value: str, row: int, col: str, binary: bool) -> float:
    s = value.strip()
    if s == "":
        raise DataError(f"missing value at row {row}, column {col!r}")
    try:
        v = float(s)
    except ValueError:
        raise DataError(f"non-numeric value {s!r} at row {row}, column {col!r}") from None
    if binary and v not in (0.0, 1.0):
        raise DataError(f"non-binary value {s!r} at row {row}, column {col!r}")
    if not math.isfinite(v):
        raise DataError(f"non-finite value {s!r} at row {row}, column {col!r}")
    return v


def load_csv(path, roles: Roles | None = None) -> Dataset:
    """Read a headed, comma-delimited UTF-8 file into a :class:`Dataset`.

    Row numbers in error messages count data rows from 1.
    """
    roles = roles or Roles()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        covs = roles.covariates
        if covs is None:
            covs = tuple(h for h in header if h not in (roles.outcome, roles.treatment, *roles.qiv))
        needed = [roles.outcome, roles.treatment, *roles.qiv, *covs]
        missing = [c for c in needed if c not in header]
        if missing:
            raise DataError(f"missing column(s) {missing} in {path}")
        idx = {c: header.index(c) for c in needed}
        binary = {roles.outcome, roles.treatment, *roles.qiv}
        cols = {c: [] for c in needed}
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"row {r} has {len(row)} fields, expected {len(header)}")
            for c in needed:
                cols[c].append(_parse(row[idx[c]], r, c, c in binary))
    if not cols[roles.outcome]:
        raise DataError(f"{path} has no data rows")
    x = np.column_stack([cols[c] for c in covs]) if covs else np.empty((len(cols[roles.outcome]), 0))
    z = np.column_stack([cols[c] for c in roles.qiv])
    return Dataset(np.array(cols[roles.outcome]), np.array(cols[roles.treatment]), z, x,
                   tuple(roles.qiv), tuple(covs))


def write_csv(d: Dataset, path, outcome="y", treatment="a") -> Path:
    """Write a dataset so that :func:`load_csv` restores it bit for bit."""
    path = Path(path)
    header = [outcome, treatment, *d.z_names, *d.x_names]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(d.n):
            w.writerow([repr(float(v)) for v in (d.y[i], d.a[i], *d.z[i], *d.x[i])])
    return path


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
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and not isinstance(obj, (str, int, float, bool)):
        return obj.value
    return obj


@dataclass
class Report:
    command: str
    config: dict
    results: dict
    dataset: dict | None = None
    warnings: list = field(default_factory=list)
    table: list | None = None  # flat rows for plotting

    def to_dict(self, timestamp: str | None = None) -> dict:
        from . import __version__

        return _jsonable({
            "schema_version": SCHEMA_VERSION,
            "software": {"name": "qiv", "version": __version__},
            "timestamp": timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "command": self.command,
            "config": self.config,
            "dataset": self.dataset,
            "results": self.results,
            "warnings": self.warnings,
        })


def dataset_info(d: Dataset) -> dict:
    return {"n": d.n, "qiv": list(d.z_names), "covariates": list(d.x_names),
            "fingerprint": d.fingerprint()}


def write_report(report: Report, out=None, stream=None) -> list[Path]:
    """Write ``<out>`` (JSON) and, if the report has a table, ``<out stem>.csv``."""
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    written = []
    if out is None:
        if stream is not None:
            stream.write(text + "\n")
        return written
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n", encoding="utf-8")
    written.append(out)
    if report.table:
        tpath = out.with_suffix(".csv")
        keys = list(report.table[0].keys())
        with tpath.open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, keys, lineterminator="\n")
            w.writeheader()
            for row in report.table:
                w.writerow({k: _jsonable(v) for k, v in row.items()})
        written.append(tpath)
    return written
