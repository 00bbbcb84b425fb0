"""CSV input/output for observation data and result tables."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "SchemaError",
    "load_dataset",
    "read_table",
    "write_table",
]


class DataError(ValueError):
    """Raised for malformed or non-numeric data."""


class SchemaError(DataError):
    """Raised when a required column is missing."""


@dataclass(frozen=True)
class Dataset:
    """Observations ``(y1, y2, x)`` of an i.i.d. sample.

    Attributes
    ----------
    y1 : ndarray of shape (n,)
        Outcomes.
    y2 : ndarray of shape (n,)
        Endogenous regressor.
    x : ndarray of shape (n, d_x)
        Instruments.
    """

    y1: np.ndarray
    y2: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y1 = np.ascontiguousarray(self.y1, dtype=float).ravel()
        y2 = np.ascontiguousarray(self.y2, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        x = np.ascontiguousarray(x)
        if not (y1.shape[0] == y2.shape[0] == x.shape[0]):
            raise DataError(
                f"column lengths differ: y1={y1.shape[0]}, y2={y2.shape[0]}, x={x.shape[0]}"
            )
        if y1.shape[0] < 1:
            raise DataError("dataset is empty")
        for name, arr in (("y1", y1), ("y2", y2), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {name}")
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.y1.shape[0]

    def subset(self, idx) -> Dataset:
        return Dataset(self.y1[idx], self.y2[idx], self.x[idx])


def _parse_cell(raw: str, row: int, col: str) -> float:
    text = raw.strip()
    if not text:
        raise DataError(f"row {row}: missing value in column {col!r}")
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}: non-numeric value {raw!r} in column {col!r}") from None
    if not math.isfinite(value):
        raise DataError(f"row {row}: non-finite value {raw!r} in column {col!r}")
    return value


def load_dataset(
    path: str | Path,
    schema: tuple[str, str, str | Sequence[str]] = ("y1", "y2", "x"),
) -> Dataset:
    """Read a CSV file into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
        CSV file with a header row.
    schema : tuple
        Column names ``(y1, y2, x)``; the instrument entry may be a sequence of
        names for multivariate instruments. Columns are looked up by name, so
        their order in the file is irrelevant.

    Raises
    ------
    SchemaError
        If a named column is absent.
    DataError
        On blank, non-numeric or non-finite cells. Row numbers are 1-based and
        count data rows (the header is row 0).
    """
    y1_name, y2_name, x_names = schema
    if isinstance(x_names, str):
        x_names = [x_names]
    wanted = [y1_name, y2_name, *x_names]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaError(f"missing column(s) {missing}; file has {header}")
        rows = []
        for i, rec in enumerate(reader, start=1):
            rows.append([_parse_cell(rec[c] if rec[c] is not None else "", i, c) for c in wanted])
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    return Dataset(arr[:, 0], arr[:, 1], arr[:, 2:])


def _render(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        # 12 significant digits; round-trips at the 10 digits we promise
        return format(float(value), ".12g")
    if value is None:
        return ""
    return str(value)


def write_table(
    rows: Iterable[Mapping[str, object]],
    path: str | Path,
    fieldnames: Sequence[str] | None = None,
) -> None:
    """Write homogeneous records to ``path`` as CSV with a header row.

    An empty ``rows`` writes only the header (given by ``fieldnames``).
    """
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    fieldnames = list(fieldnames)
    for i, rec in enumerate(rows):
        if list(rec.keys()) != fieldnames:
            raise DataError(f"record {i} fields {list(rec.keys())} differ from {fieldnames}")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for rec in rows:
            writer.writerow([_render(rec[k]) for k in fieldnames])


def read_table(path: str | Path) -> list[dict[str, object]]:
    """Read a CSV written by :func:`write_table`; numeric cells become floats."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            row: dict[str, object] = {}
            for k, v in rec.items():
                try:
                    row[k] = float(v)
                except (TypeError, ValueError):
                    row[k] = v
            out.append(row)
    return out
