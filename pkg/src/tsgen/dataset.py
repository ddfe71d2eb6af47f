"""Tabular sample model: schema, CSV persistence, splitting and class balance.

Rows are stored as a float64 matrix. Continuous cells hold the value itself,
categorical cells hold the index of the category in ``ColumnSchema.categories``.
On disk categorical cells are written as labels so files stay readable.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
ROLES = ("feature", "condition", "label")


class SchemaError(ValueError):
    """Schema definition violates an invariant."""


class TableFormatError(ValueError):
    """A table file or row cannot be parsed against its schema."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    unit: str = ""
    role: str = "feature"

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")
        if "," in self.name:
            raise SchemaError(f"column {self.name!r}: names may not contain commas")
        if self.kind == CATEGORICAL:
            if len(set(self.categories)) < 2 or len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r}: needs >= 2 distinct categories")
        elif self.categories:
            raise SchemaError(f"column {self.name!r}: continuous columns have no categories")
        if self.role in ("condition", "label") and self.kind != CATEGORICAL:
            raise SchemaError(f"column {self.name!r}: {self.role} columns must be categorical")

    @property
    def is_continuous(self) -> bool:
        return self.kind == CONTINUOUS

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "categories": list(self.categories),
            "unit": self.unit,
            "role": self.role,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSchema":
        return cls(
            name=d["name"],
            kind=d["kind"],
            categories=tuple(d.get("categories", ())),
            unit=d.get("unit", ""),
            role=d.get("role", "feature"),
        )


def validate_schema(schema: Sequence[ColumnSchema]) -> tuple[ColumnSchema, ...]:
    schema = tuple(schema)
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise SchemaError(f"duplicate column names: {dup}")
    n_label = sum(c.role == "label" for c in schema)
    if n_label != 1:
        raise SchemaError(f"schema needs exactly one label column, found {n_label}")
    return schema


@dataclass(frozen=True, eq=False)
class SampleTable:
    schema: tuple[ColumnSchema, ...]
    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        schema = validate_schema(self.schema)
        rows = np.array(self.rows, dtype=np.float64, copy=True)
        if rows.size == 0:
            rows = rows.reshape(0, len(schema))
        if rows.ndim != 2 or rows.shape[1] != len(schema):
            raise TableFormatError(
                f"rows have shape {rows.shape}, schema has {len(schema)} columns"
            )
        for j, col in enumerate(schema):
            values = rows[:, j]
            if col.is_continuous:
                bad = np.flatnonzero(~np.isfinite(values))
                if bad.size:
                    raise TableFormatError(
                        f"row {bad[0]}, column {col.name!r}: non-finite continuous value"
                    )
            else:
                ok = (values >= 0) & (values < len(col.categories)) & (values == np.floor(values))
                bad = np.flatnonzero(~ok)
                if bad.size:
                    raise TableFormatError(
                        f"row {bad[0]}, column {col.name!r}: category index {values[bad[0]]!r} "
                        f"outside 0..{len(col.categories) - 1}"
                    )
        rows.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "rows", rows)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    def index_of(self, name: str) -> int:
        for j, c in enumerate(self.schema):
            if c.name == name:
                return j
        raise KeyError(f"unknown column {name!r}")

    def column_schema(self, name: str) -> ColumnSchema:
        return self.schema[self.index_of(name)]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.index_of(name)]

    @property
    def label_column(self) -> ColumnSchema:
        return next(c for c in self.schema if c.role == "label")

    @property
    def condition_columns(self) -> list[ColumnSchema]:
        return [c for c in self.schema if c.role == "condition"]

    def feature_matrix(self) -> np.ndarray:
        """Continuous feature columns as an ``(n, d)`` array."""
        idx = [j for j, c in enumerate(self.schema) if c.is_continuous and c.role == "feature"]
        return self.rows[:, idx]

    def labels(self) -> np.ndarray:
        return self.column(self.label_column.name).astype(np.int64)

    def take(self, indices: Iterable[int]) -> "SampleTable":
        return SampleTable(self.schema, self.rows[np.asarray(list(indices), dtype=np.int64)])

    def equals(self, other: "SampleTable") -> bool:
        return self.schema == other.schema and np.array_equal(self.rows, other.rows)


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    train: SampleTable
    test: SampleTable
    seed: int
    train_indices: np.ndarray
    test_indices: np.ndarray


def _format_float(x: float) -> str:
    # repr gives the shortest string that round-trips a float64 exactly
    return repr(float(x))


def save_table(table: SampleTable, path) -> None:
    path = Path(path)
    try:
        fh = path.open("w", encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(f"cannot write table to {path}: {exc}") from exc
    with fh:
        fh.write(",".join(table.names) + "\n")
        cats = [c.categories for c in table.schema]
        for row in table.rows:
            cells = [
                _format_float(v) if not cat else cat[int(v)]
                for v, cat in zip(row, cats)
            ]
            fh.write(",".join(cells) + "\n")


def load_table(path, schema: Sequence[ColumnSchema]) -> SampleTable:
    schema = validate_schema(schema)
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"table file not found: {path}")
    lookup = [{lab: i for i, lab in enumerate(c.categories)} for c in schema]
    rows = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = [c.name for c in schema]
        if header != expected:
            raise TableFormatError(
                f"{path}: header mismatch at line 1; expected {expected}, got {header}"
            )
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(schema):
                raise TableFormatError(
                    f"{path}: line {lineno} has {len(cells)} cells, expected {len(schema)}"
                )
            values = []
            for col, cell, cmap in zip(schema, cells, lookup):
                if col.is_continuous:
                    try:
                        v = float(cell)
                    except ValueError:
                        raise TableFormatError(
                            f"{path}: line {lineno}, column {col.name!r}: "
                            f"non-numeric value {cell!r}"
                        ) from None
                    if not math.isfinite(v):
                        raise TableFormatError(
                            f"{path}: line {lineno}, column {col.name!r}: non-finite value"
                        )
                else:
                    if cell not in cmap:
                        raise TableFormatError(
                            f"{path}: line {lineno}, column {col.name!r}: "
                            f"unknown category {cell!r}"
                        )
                    v = float(cmap[cell])
                values.append(v)
            rows.append(values)
    return SampleTable(schema, np.array(rows, dtype=np.float64).reshape(len(rows), len(schema)))


def save_schema(schema: Sequence[ColumnSchema], path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump({"columns": [c.to_dict() for c in schema]}, fh, indent=1)
        fh.write("\n")


def load_schema(path) -> tuple[ColumnSchema, ...]:
    with Path(path).open("r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return validate_schema(ColumnSchema.from_dict(d) for d in payload["columns"])


def schema_path_for(table_path) -> Path:
    """Sidecar schema location for a CSV: ``samples.csv`` -> ``samples.schema.json``."""
    p = Path(table_path)
    return p.with_name(p.stem + ".schema.json")


def split_dataset(table: SampleTable, train_fraction: float, seed: int) -> DatasetSplit:
    """Uniform random partition of rows into train and test.

    Indices are permuted with numpy's PCG64 generator (``default_rng(seed)``);
    the first ``round(train_fraction * N)`` permuted rows form the train side.
    """
    n = len(table)
    if n == 0:
        raise ValueError("cannot split an empty table")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(math.floor(train_fraction * n + 0.5))
    perm = np.random.default_rng(seed).permutation(n)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return DatasetSplit(table.take(tr), table.take(te), seed, tr, te)


def union_datasets(a: SampleTable, b: SampleTable) -> SampleTable:
    if a.schema != b.schema:
        raise SchemaError("cannot union tables with different schemas")
    return SampleTable(a.schema, np.vstack([a.rows, b.rows]))


def class_balance(table: SampleTable, column: str) -> dict[str, tuple[int, float]]:
    col = table.column_schema(column)
    if col.is_continuous:
        raise ValueError(f"column {column!r} is continuous; class balance needs a categorical column")
    counts = np.bincount(table.column(column).astype(np.int64), minlength=len(col.categories))
    total = counts.sum()
    return {
        cat: (int(c), float(c) / total if total else 0.0)
        for cat, c in zip(col.categories, counts)
    }
