"""Reading and grouping of the experiment CSV contract.

The expected schema (one header row) is:

    experiment, seed, rep_count, precision_mode, precision_value, variant,
    placement, grid_name, grid_value, layer, metric, stat, value, count_inf

This package renders whatever the CSV contains and never recomputes any
numerical quantity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

EXPECTED_COLUMNS = ("experiment", "seed", "rep_count", "precision_mode",
                    "precision_value", "variant", "placement", "grid_name",
                    "grid_value", "layer", "metric", "stat", "value",
                    "count_inf")


class SchemaError(ValueError):
    """The CSV does not follow the experiment-table schema."""


@dataclass
class Table:
    rows: list[dict]

    def __len__(self):
        return len(self.rows)

    def filtered(self, **want) -> list[dict]:
        out = []
        for row in self.rows:
            if all(row.get(k) == v for k, v in want.items()):
                out.append(row)
        return out

    def values(self, column: str) -> list[str]:
        seen = []
        for row in self.rows:
            v = row[column]
            if v not in seen:
                seen.append(v)
        return seen

    def series(self, x_column: str, x_as=float, **want) -> tuple[list, list]:
        """(x, value) pairs sorted by x for rows matching ``want``;
        rows with an empty value are skipped."""
        pts = []
        for row in self.filtered(**want):
            if row["value"] == "":
                continue
            pts.append((x_as(row[x_column]), float(row["value"])))
        pts.sort(key=lambda p: p[0])
        return [p[0] for p in pts], [p[1] for p in pts]


def load_table(path) -> Table:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != EXPECTED_COLUMNS:
            raise SchemaError(
                f"unexpected CSV header {reader.fieldnames!r}; "
                f"expected {list(EXPECTED_COLUMNS)}")
        return Table(list(reader))


def precision_label(row: dict) -> str:
    mode = row["precision_mode"]
    if mode == "native":
        return "double"
    unit = "digits" if mode == "decimal" else "bits"
    return f"{row['precision_value']} {unit}"


def group_precisions(table: Table) -> list[tuple[str, str]]:
    """Distinct (precision_mode, precision_value) pairs in file order."""
    seen = []
    for row in table.rows:
        key = (row["precision_mode"], row["precision_value"])
        if key not in seen:
            seen.append(key)
    return seen
