"""CSV datasets and result tables.

Dataset files have a header row with a ``time`` column (nonnegative), an
``event`` column (0/1) and any number of feature columns, in order.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from fedcox.survival import InputError, SurvivalDataset


class ParseError(InputError):
    pass


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def load_dataset(path) -> SurvivalDataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    for required in ("time", "event"):
        if required not in header:
            raise ParseError(f"missing column: {required}")
    t_col, e_col = header.index("time"), header.index("event")
    feat_cols = [i for i, h in enumerate(header) if i not in (t_col, e_col)]
    times, events, X = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"row {lineno}: expected {len(header)} cells, got {len(row)}")
        values = []
        for i, cell in enumerate(row):
            try:
                values.append(float(cell))
            except ValueError:
                raise ParseError(f"row {lineno}, column {header[i]}: not a number: {cell!r}") from None
            if not math.isfinite(values[-1]):
                raise ParseError(f"row {lineno}, column {header[i]}: value must be finite")
        if values[t_col] < 0:
            raise ParseError(f"row {lineno}, column time: negative time {values[t_col]}")
        if values[e_col] not in (0.0, 1.0):
            raise ParseError(f"row {lineno}, column event: expected 0 or 1, got {row[e_col]!r}")
        times.append(values[t_col])
        events.append(values[e_col] == 1.0)
        X.append([values[i] for i in feat_cols])
    names = [header[i] for i in feat_cols]
    covariates = np.array(X, dtype=np.float64).reshape(len(X), len(names))
    return SurvivalDataset(names, covariates, np.array(times), np.array(events, dtype=bool))


def save_dataset(data: SurvivalDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time", "event", *data.feature_names])
        for t, e, x in zip(data.time, data.event, data.covariates):
            writer.writerow([fmt(float(t)), int(e), *(fmt(float(v)) for v in x)])


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_table(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
