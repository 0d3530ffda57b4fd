"""
CSV readers and writers for panels and transformation-coded macro tables.

Panel files may carry a header row of variable names and a first column
of time labels; both are detected automatically. Empty cells read as
missing (NaN). Numbers are written with 17 significant digits so that
repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import Panel


class PanelTable(NamedTuple):
    """Parsed panel file before missing values are resolved."""

    values: np.ndarray
    time_labels: Optional[tuple]
    var_names: Optional[tuple]


def fmt(x) -> str:
    """Format a number at full precision; NaN becomes an empty cell."""
    x = float(x)
    if np.isnan(x):
        return ""
    return format(x, ".17g")


def _parse_cell(s: str) -> float:
    s = s.strip()
    if s == "":
        return np.nan
    return float(s)


def _is_number(s: str) -> bool:
    s = s.strip()
    if s == "":
        return True
    try:
        float(s)
    except ValueError:
        return False
    return True


def _read_rows(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if any(c.strip() for c in row)]
    if not rows:
        raise ValueError(f"{path}: file is empty")
    return rows


def _numeric_block(rows, path, first_line):
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"{path}: line {first_line + i} has {len(row)} cells, expected {width}")
        for j, cell in enumerate(row):
            try:
                out[i, j] = _parse_cell(cell)
            except ValueError:
                raise ValueError(
                    f"{path}: line {first_line + i}, column {j + 1}: cannot parse {cell!r} as a number"
                ) from None
    return out


def read_panel_table(path) -> PanelTable:
    """
    Read a panel CSV, detecting an optional header row and an optional
    leading column of time labels.

    A header is assumed when any cell of the first row (other than a
    label-column corner) fails to parse as a number; a label column is
    assumed when any data cell of the first column fails to parse, so
    purely numeric time labels (such as bare years) read as data.
    """
    rows = _read_rows(path)
    label_col = any(not _is_number(r[0]) for r in rows[1:]) or (
        len(rows) == 1 and not _is_number(rows[0][0])
    )
    start = 1 if label_col else 0
    has_header = any(not _is_number(c) for c in rows[0][start:])
    body = rows[1:] if has_header else rows
    if not body:
        raise ValueError(f"{path}: no data rows")
    names = tuple(c.strip() for c in rows[0][start:]) if has_header else None
    labels = tuple(r[0].strip() for r in body) if label_col else None
    data = [r[start:] for r in body]
    values = _numeric_block(data, path, 2 if has_header else 1)
    if names is not None and len(names) != values.shape[1]:
        raise ValueError(f"{path}: header has {len(names)} names for {values.shape[1]} columns")
    return PanelTable(values, labels, names)


def read_panel_csv(path) -> Panel:
    """Read a complete (no missing cells) panel CSV into a :class:`Panel`."""
    table = read_panel_table(path)
    miss = np.argwhere(np.isnan(table.values))
    if miss.size:
        cells = ", ".join(f"(row {i + 1}, col {j + 1})" for i, j in miss[:10])
        more = "" if len(miss) <= 10 else f" and {len(miss) - 10} more"
        raise ValueError(f"{path}: {len(miss)} missing cells: {cells}{more}; run `transform` with an impute policy first")
    return Panel(table.values, table.time_labels, table.var_names)


def write_matrix_csv(path, values, columns: Sequence[str], index: Optional[Sequence[str]] = None, index_name="label"):
    """Write a 2-D array with a header row and an optional label column."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = list(columns)
        if index is not None:
            head = [index_name] + head
        w.writerow(head)
        for i, row in enumerate(values):
            cells = [fmt(v) for v in row]
            if index is not None:
                cells = [index[i]] + cells
            w.writerow(cells)


def write_panel_csv(path, panel: Panel):
    """Write ``panel`` so that :func:`read_panel_csv` recovers it exactly."""
    names = panel.var_names or tuple(f"x{j + 1}" for j in range(panel.N))
    index = panel.time_labels
    write_matrix_csv(path, panel.values, names, index, index_name="date")


def read_fred_csv(path):
    """
    Read a table in the FRED-MD/QD layout: the first row holds the series
    names, the second row the transformation codes, and the first column
    the dates. Returns a :class:`cqfm.macro.RawSeriesTable`.
    """
    from .macro import RawSeriesTable

    rows = _read_rows(path)
    if len(rows) < 3:
        raise ValueError(f"{path}: need a names row, a tcode row and at least one data row")
    names = tuple(c.strip() for c in rows[0][1:])
    try:
        codes = [int(float(c)) for c in rows[1][1:]]
    except ValueError:
        raise ValueError(f"{path}: second row must hold integer transformation codes") from None
    dates = tuple(r[0].strip() for r in rows[2:])
    values = _numeric_block([r[1:] for r in rows[2:]], path, 3)
    return RawSeriesTable(values, codes, names, dates)


def write_fred_csv(path, table):
    """Write a :class:`cqfm.macro.RawSeriesTable` in the FRED layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date"] + list(table.names))
        w.writerow(["transform"] + [str(int(c)) for c in table.tcodes])
        for d, row in zip(table.dates, table.values):
            w.writerow([d] + [fmt(v) for v in row])
