"""Plain-text tables: '# key: <json>' metadata lines, a CSV header row, and
float rows written with repr so a write -> read -> write cycle is byte-exact."""
from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, field

import numpy as np

UNIT_SUFFIX = re.compile(r".+_(MHz|mT|G|deg|rad|us|rel)$")


@dataclass
class TabularSeries:
    columns: list
    rows: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float)
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.columns):
            raise ValueError("rows must be a rectangular array with one column per name")
        for name in self.columns:
            if "," in name or not name:
                raise ValueError(f"bad column name {name!r}")

    def column(self, name) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    def __eq__(self, other):
        if not isinstance(other, TabularSeries):
            return NotImplemented
        return (self.columns == other.columns and self.metadata == other.metadata
                and self.rows.shape == other.rows.shape
                and bool(np.all((self.rows == other.rows) | (np.isnan(self.rows) & np.isnan(other.rows)))))


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps(series: TabularSeries) -> str:
    buf = io.StringIO()
    for key, value in series.metadata.items():
        if "\n" in key or ":" in key:
            raise ValueError(f"bad metadata key {key!r}")
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    buf.write(",".join(series.columns) + "\n")
    for row in series.rows:
        buf.write(",".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue()


def loads(text: str) -> TabularSeries:
    metadata, lines = {}, text.splitlines()
    i = 0
    while i < len(lines) and lines[i].startswith("# "):
        key, _, value = lines[i][2:].partition(": ")
        metadata[key] = json.loads(value)
        i += 1
    if i >= len(lines):
        raise ValueError("table has no header row")
    columns = lines[i].split(",")
    rows = [[float(x) for x in line.split(",")] for line in lines[i + 1:] if line]
    for n, r in enumerate(rows):
        if len(r) != len(columns):
            raise ValueError(f"row {n} has {len(r)} fields, expected {len(columns)}")
    return TabularSeries(columns, np.array(rows, dtype=float).reshape(len(rows), len(columns)), metadata)


def write(series: TabularSeries, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(series))


def read(path) -> TabularSeries:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
