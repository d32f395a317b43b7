"""CSV input and output for clutch datasets."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import PRIMARY, SECONDARY, Dataset, DatasetError

COLUMNS = {SECONDARY: ("n", "m"), PRIMARY: ("N", "M")}


def _cell(row: dict, col: str, lineno: int) -> int:
    raw = (row.get(col) or "").strip()
    try:
        value = int(raw)
    except ValueError:
        raise DatasetError(f"row {lineno}: column {col!r} is not an integer ({raw!r})") from None
    if value < 0:
        raise DatasetError(f"row {lineno}: column {col!r} is negative ({value})")
    return value


def parse_dataset_csv(path, mode: str = SECONDARY) -> Dataset:
    """Read one clutch per row; the header is row 1, so the first clutch is row 2.

    Secondary files need columns n, m; primary files need N, M. An optional
    ``deaths`` column is kept (and checked against the clutch size for primary data).
    """
    if mode not in COLUMNS:
        raise DatasetError(f"unknown data mode {mode!r}")
    size_col, male_col = COLUMNS[mode]
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if not header:
            raise DatasetError(f"{path}: missing header row")
        reader.fieldnames = header
        missing = [c for c in (size_col, male_col) if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing column(s) {', '.join(missing)} for {mode} data")
        has_deaths = "deaths" in header
        sizes, males, deaths = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not any((v or "").strip() for v in row.values() if isinstance(v, str)):
                continue
            k = _cell(row, size_col, lineno)
            x = _cell(row, male_col, lineno)
            if x > k:
                raise DatasetError(f"row {lineno}: {male_col} > {size_col} ({x} > {k})")
            if has_deaths:
                dead = _cell(row, "deaths", lineno)
                if mode == PRIMARY and dead > k:
                    raise DatasetError(f"row {lineno}: deaths exceed clutch size ({dead} > {k})")
                deaths.append(dead)
            sizes.append(k)
            males.append(x)
    return Dataset(
        np.array(sizes, np.int64),
        np.array(males, np.int64),
        mode=mode,
        deaths=np.array(deaths, np.int64) if has_deaths else None,
    )


def filter_zero_mortality(dataset: Dataset) -> Dataset:
    """Clutches with no recorded deaths, relabelled as primary data (N = n, M = m)."""
    if dataset.deaths is None:
        raise DatasetError("dataset has no deaths column")
    keep = dataset.deaths == 0
    return Dataset(dataset.sizes[keep], dataset.males[keep], mode=PRIMARY, deaths=dataset.deaths[keep])


def write_dataset_csv(target, dataset: Dataset, truth: Dataset | None = None):
    """Write n,m (or N,M) rows to a path or open text file.

    ``truth`` appends the hidden pre-mortality counts as N,M columns.
    """
    size_col, male_col = COLUMNS[dataset.mode]
    header = [size_col, male_col]
    cols = [dataset.sizes, dataset.males]
    if dataset.deaths is not None:
        header.append("deaths")
        cols.append(dataset.deaths)
    if truth is not None:
        header += ["N", "M"]
        cols += [truth.sizes, truth.males]
    rows = np.column_stack(cols).tolist() if dataset.C else []
    if hasattr(target, "write"):
        _write_rows(target, header, rows)
        return
    with open(target, "w", newline="", encoding="utf-8") as fh:
        _write_rows(fh, header, rows)


def _write_rows(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
