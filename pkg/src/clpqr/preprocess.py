"""CSV ingestion with optional standardization and squared predictors.

Pipeline order: standardize the response and the predictors (excluded
columns pass through untouched), append squares of the standardized
non-excluded predictors, then standardize the squared columns as well
(``restandardize_squares``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Dataset


class DataError(ValueError):
    """The input file is missing, malformed or inconsistent."""


@dataclass
class PreprocessReport:
    response: str
    columns: List[str]
    means: Dict[str, float] = field(default_factory=dict)
    scales: Dict[str, float] = field(default_factory=dict)
    constant_columns: List[str] = field(default_factory=list)
    excluded: List[str] = field(default_factory=list)


def read_csv(path) -> Tuple[List[str], np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError("CSV file is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise DataError(f"row {i + 1} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"non-numeric value {cell!r} in row {i + 1}, "
                                f"column {header[j]!r}") from None
    if values.shape[0] == 0:
        raise DataError("CSV file has a header but no data rows")
    if not np.all(np.isfinite(values)):
        raise DataError("CSV contains NaN or infinite values")
    return header, values


def _standardize(v: np.ndarray) -> Tuple[np.ndarray, float, float]:
    mean = float(np.mean(v))
    sd = float(np.std(v))
    if sd == 0.0 or not math.isfinite(sd):
        return v, mean, math.nan
    return (v - mean) / sd, mean, sd


def load_csv(path, response: str, standardize: bool = False, add_squares: bool = False,
             exclude_cols: Sequence[str] = (), restandardize_squares: bool = True,
             columns: Optional[Sequence[str]] = None) -> Tuple[Dataset, PreprocessReport]:
    header, values = read_csv(path)
    if response not in header:
        raise DataError(f"response column {response!r} not found")
    for name in exclude_cols:
        if name not in header:
            raise DataError(f"excluded column {name!r} not found")
    predictors = [h for h in header if h != response] if columns is None else list(columns)
    for name in predictors:
        if name not in header or name == response:
            raise DataError(f"predictor column {name!r} not found")
    if not predictors:
        raise DataError("no predictor columns")
    col = {h: values[:, j] for j, h in enumerate(header)}
    report = PreprocessReport(response, [], excluded=list(exclude_cols))

    def transform(name, v, scale_it):
        if not scale_it:
            return v
        out, mean, sd = _standardize(v)
        if math.isnan(sd):
            report.constant_columns.append(name)
            return v
        report.means[name] = mean
        report.scales[name] = sd
        return out

    y = transform(response, col[response], standardize)
    names, cols = [], []
    for name in predictors:
        names.append(name)
        cols.append(transform(name, col[name], standardize and name not in exclude_cols))
    if add_squares:
        for name, v in list(zip(names, cols)):
            if name in exclude_cols:
                continue
            sq = name + "^2"
            names.append(sq)
            cols.append(transform(sq, v * v, standardize and restandardize_squares))
    report.columns = names
    return Dataset(np.column_stack(cols), y, names), report
