"""Typed mixed tabular data: schemas, CSV loading, encoding and subsampling.

Numeric columns are stored as float64 arrays with NaN marking a missing
cell; categorical and binary columns are object arrays holding the category
string or ``None``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

KINDS = ("continuous", "integer", "categorical", "binary")
NUMERIC_KINDS = ("continuous", "integer")
MISSING = "<MISSING>"


class SchemaError(ValueError):
    pass


class TableError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    missing_allowed: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        cats = tuple(str(c) for c in self.categories)
        object.__setattr__(self, "categories", cats)
        if self.kind == "categorical" and len(cats) < 2:
            raise SchemaError(f"column {self.name!r}: categorical needs >= 2 categories")
        if self.kind == "binary" and len(cats) != 2:
            raise SchemaError(f"column {self.name!r}: binary needs exactly 2 categories")
        if self.kind in NUMERIC_KINDS and cats:
            raise SchemaError(f"column {self.name!r}: numeric columns take no categories")
        if len(set(cats)) != len(cats):
            raise SchemaError(f"column {self.name!r}: duplicate categories")
        if MISSING in cats:
            raise SchemaError(f"column {self.name!r}: {MISSING!r} is reserved")

    @property
    def numeric(self) -> bool:
        return self.kind in NUMERIC_KINDS


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        cols = tuple(self.columns)
        if not cols:
            raise SchemaError("a schema needs at least one column")
        names = [c.name for c in cols]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise SchemaError(f"duplicate column names: {dupes}")
        object.__setattr__(self, "columns", cols)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __len__(self) -> int:
        return len(self.columns)

    def __getitem__(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        cols = []
        for c in self.columns:
            d = {"name": c.name, "kind": c.kind}
            if c.categories:
                d["categories"] = list(c.categories)
            d["missing_allowed"] = c.missing_allowed
            cols.append(d)
        return {"columns": cols}

    @classmethod
    def from_dict(cls, doc: dict) -> TableSchema:
        try:
            raw = doc["columns"]
            cols = tuple(
                ColumnSpec(
                    name=str(c["name"]),
                    kind=c["kind"],
                    categories=tuple(c.get("categories", ())),
                    missing_allowed=bool(c.get("missing_allowed", False)),
                )
                for c in raw
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc
        return cls(cols)


def load_schema(path) -> TableSchema:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return TableSchema.from_dict(doc)


def save_schema(schema: TableSchema, path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2) + "\n", encoding="utf-8")


class RawTable:
    """A validated table; immutable by convention."""

    def __init__(self, schema: TableSchema, columns: dict[str, np.ndarray]):
        self.schema = schema
        self.columns = {}
        n = None
        for spec in schema.columns:
            col = np.asarray(columns[spec.name], dtype=np.float64 if spec.numeric else object)
            col.flags.writeable = False
            if n is None:
                n = col.shape[0]
            elif col.shape[0] != n:
                raise TableError("columns have different lengths")
            self.columns[spec.name] = col

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values())))

    def __len__(self) -> int:
        return self.n_rows

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def rows(self) -> list[tuple]:
        cols = [self.columns[n] for n in self.schema.names]
        out = []
        for i in range(self.n_rows):
            row = []
            for spec, col in zip(self.schema.columns, cols):
                v = col[i]
                if spec.numeric:
                    v = None if math.isnan(v) else (int(v) if spec.kind == "integer" else float(v))
                row.append(v)
            out.append(tuple(row))
        return out

    def take(self, indices) -> RawTable:
        idx = np.asarray(indices, dtype=np.int64)
        return RawTable(self.schema, {k: v[idx] for k, v in self.columns.items()})

    def equals(self, other: RawTable, rtol: float = 0.0) -> bool:
        if self.schema != other.schema or self.n_rows != other.n_rows:
            return False
        for spec in self.schema.columns:
            a, b = self.columns[spec.name], other.columns[spec.name]
            if spec.numeric:
                if not np.array_equal(np.isnan(a), np.isnan(b)):
                    return False
                ok = ~np.isnan(a)
                if spec.kind == "integer" or rtol == 0.0:
                    if not np.array_equal(a[ok], b[ok]):
                        return False
                elif not np.allclose(a[ok], b[ok], rtol=rtol, atol=0.0):
                    return False
            elif not all(x == y for x, y in zip(a, b)):
                return False
        return True

    def validate(self) -> None:
        for spec in self.schema.columns:
            col = self.columns[spec.name]
            if spec.numeric:
                missing = np.isnan(col)
                if spec.kind == "integer" and not np.all(col[~missing] == np.round(col[~missing])):
                    raise TableError(f"column {spec.name!r}: non-integer value")
                if np.isinf(col).any():
                    raise TableError(f"column {spec.name!r}: infinite value")
            else:
                allowed = set(spec.categories)
                missing = np.array([v is None for v in col], dtype=bool)
                bad = {v for v in col if v is not None and v not in allowed}
                if bad:
                    raise TableError(f"column {spec.name!r}: unknown categories {sorted(bad)}")
            if missing.any() and not spec.missing_allowed:
                raise TableError(f"column {spec.name!r}: missing value not allowed")


def _parse_cell(spec: ColumnSpec, cell: str, row: int):
    if cell == "":
        if not spec.missing_allowed:
            raise TableError(f"row {row}, column {spec.name!r}: missing value not allowed")
        return math.nan if spec.numeric else None
    if spec.kind == "continuous":
        try:
            value = float(cell)
        except ValueError:
            raise TableError(f"row {row}, column {spec.name!r}: cannot parse {cell!r} as a number") from None
        if not math.isfinite(value):
            raise TableError(f"row {row}, column {spec.name!r}: non-finite value {cell!r}")
        return value
    if spec.kind == "integer":
        try:
            value = float(cell)
        except ValueError:
            raise TableError(f"row {row}, column {spec.name!r}: cannot parse {cell!r} as an integer") from None
        if not (math.isfinite(value) and value.is_integer()):
            raise TableError(f"row {row}, column {spec.name!r}: {cell!r} is not an integer")
        return value
    if cell not in spec.categories:
        raise TableError(f"row {row}, column {spec.name!r}: unknown category {cell!r}")
    return cell


def load_table(path, schema: TableSchema) -> RawTable:
    """Read a UTF-8, comma-separated CSV whose header matches ``schema``.

    Empty cells are missing values. Error messages give 1-based data row
    numbers (the header is row 0).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableError(f"{path}: empty file, expected a header row") from None
        if header != schema.names:
            raise TableError(f"{path}: header {header} does not match schema columns {schema.names}")
        cols: list[list] = [[] for _ in schema.columns]
        for r, record in enumerate(reader, start=1):
            if not record:
                continue
            if len(record) != len(schema.columns):
                raise TableError(f"row {r}: expected {len(schema.columns)} cells, got {len(record)}")
            for j, (spec, cell) in enumerate(zip(schema.columns, record)):
                cols[j].append(_parse_cell(spec, cell, r))
    return RawTable(
        schema,
        {
            spec.name: np.array(c, dtype=np.float64 if spec.numeric else object)
            for spec, c in zip(schema.columns, cols)
        },
    )


def save_table(table: RawTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(table.schema.names)
        for row in table.rows:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])


# -- encoding ----------------------------------------------------------------


class Group(NamedTuple):
    column: str
    start: int
    stop: int
    kind: str  # "continuous", "categorical" or "missing" (indicator for a numeric column)

    @property
    def width(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class EncodedMatrix:
    values: np.ndarray
    group_map: tuple[Group, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("encoded values must be a 2-D matrix")
        gm = tuple(Group(*g) for g in self.group_map)
        width = sum(g.width for g in gm)
        if values.shape[1] != width:
            raise ValueError(f"matrix has {values.shape[1]} columns but groups cover {width}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "group_map", gm)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.n_rows

    def take(self, indices) -> EncodedMatrix:
        return EncodedMatrix(self.values[np.asarray(indices, dtype=np.int64)], self.group_map)

    def with_values(self, values: np.ndarray) -> EncodedMatrix:
        return EncodedMatrix(values, self.group_map)

    @staticmethod
    def concat(parts: Sequence[EncodedMatrix]) -> EncodedMatrix:
        gm = parts[0].group_map
        if any(p.group_map != gm for p in parts):
            raise ValueError("cannot concatenate matrices with different group maps")
        return EncodedMatrix(np.concatenate([p.values for p in parts], axis=0), gm)


@dataclass(frozen=True)
class Encoder:
    schema: TableSchema
    means: dict[str, float]
    stds: dict[str, float]
    category_index: dict[str, dict[str, int]]
    missing_indicator: dict[str, bool]

    @property
    def group_map(self) -> tuple[Group, ...]:
        groups, pos = [], 0
        for spec in self.schema.columns:
            if spec.numeric:
                groups.append(Group(spec.name, pos, pos + 1, "continuous"))
                pos += 1
                if self.missing_indicator[spec.name]:
                    groups.append(Group(spec.name, pos, pos + 1, "missing"))
                    pos += 1
            else:
                width = len(self.category_index[spec.name])
                groups.append(Group(spec.name, pos, pos + width, "categorical"))
                pos += width
        return tuple(groups)

    @property
    def width(self) -> int:
        return sum(g.width for g in self.group_map)


def fit_encoder(table: RawTable) -> Encoder:
    """Standardization stats (population std) and category maps for ``table``.

    Missing numeric cells are mean-imputed before the std is taken; columns
    that may be missing get an indicator dimension, categorical columns that
    may be missing get a trailing MISSING category.
    """
    if table.n_rows < 2:
        raise TableError("need at least 2 rows to fit an encoder")
    means, stds, cats, indicator = {}, {}, {}, {}
    for spec in table.schema.columns:
        col = table[spec.name]
        if spec.numeric:
            observed = col[~np.isnan(col)]
            if observed.size == 0:
                raise TableError(f"column {spec.name!r}: every value is missing")
            mu = float(observed.mean())
            filled = np.where(np.isnan(col), mu, col)
            mu = float(filled.mean())
            sd = float(filled.std())
            if not sd > 0.0 or sd < 1e-12 * max(1.0, abs(mu)):
                raise TableError(f"column {spec.name!r}: zero variance, cannot standardize")
            means[spec.name], stds[spec.name] = mu, sd
            indicator[spec.name] = spec.missing_allowed
        else:
            names = list(spec.categories) + ([MISSING] if spec.missing_allowed else [])
            cats[spec.name] = {c: i for i, c in enumerate(names)}
    return Encoder(table.schema, means, stds, cats, indicator)


def encode(enc: Encoder, table: RawTable) -> EncodedMatrix:
    if table.schema != enc.schema:
        raise TableError("table schema does not match the encoder's schema")
    n = table.n_rows
    groups = enc.group_map
    out = np.zeros((n, sum(g.width for g in groups)))
    for g in groups:
        spec = enc.schema[g.column]
        col = table[g.column]
        if g.kind == "continuous":
            miss = np.isnan(col)
            out[:, g.start] = np.where(miss, 0.0, (col - enc.means[g.column]) / enc.stds[g.column])
        elif g.kind == "missing":
            out[:, g.start] = np.isnan(col)
        else:
            index = enc.category_index[g.column]
            try:
                codes = np.fromiter(
                    (index[MISSING if v is None else v] for v in col), dtype=np.int64, count=n
                )
            except KeyError as exc:
                raise TableError(f"column {spec.name!r}: unseen category {exc.args[0]!r}") from None
            out[np.arange(n), g.start + codes] = 1.0
    return EncodedMatrix(out, groups)


def decode(enc: Encoder, m: EncodedMatrix) -> RawTable:
    """Invert :func:`encode`; categorical groups decode by argmax (ties to the lowest index)."""
    groups = enc.group_map
    if m.group_map != groups:
        raise TableError("encoded matrix group map does not match the encoder")
    if m.values.shape[1] != enc.width:
        raise TableError(f"expected {enc.width} encoded columns, got {m.values.shape[1]}")
    v = m.values
    cols: dict[str, np.ndarray] = {}
    for g in groups:
        spec = enc.schema[g.column]
        if g.kind == "continuous":
            x = v[:, g.start] * enc.stds[g.column] + enc.means[g.column]
            if spec.kind == "integer":
                x = np.round(x)
            cols[g.column] = x
        elif g.kind == "missing":
            cols[g.column] = np.where(v[:, g.start] >= 0.5, np.nan, cols[g.column])
        else:
            names = list(enc.category_index[g.column])
            codes = np.argmax(v[:, g.start : g.stop], axis=1)
            cols[g.column] = np.array(
                [None if names[c] == MISSING else names[c] for c in codes], dtype=object
            )
    return RawTable(enc.schema, cols)


# -- sampling ----------------------------------------------------------------


def subsample(table: RawTable, n: int, seed: int) -> RawTable:
    """Uniform sample of ``n`` rows without replacement, a pure function of the inputs."""
    if not 1 <= n <= table.n_rows:
        raise TableError(f"cannot draw {n} rows from a table of {table.n_rows}")
    idx = np.random.default_rng(seed).choice(table.n_rows, size=n, replace=False)
    return table.take(idx)


def carve(n_rows: int, sizes: Sequence[int], seed: int) -> list[np.ndarray]:
    """Split ``range(n_rows)`` into pairwise-disjoint random index sets of the given sizes."""
    total = int(sum(sizes))
    if total > n_rows:
        raise TableError(f"need {total} rows for disjoint pools {list(sizes)} but only {n_rows} exist")
    perm = np.random.default_rng(seed).permutation(n_rows)
    out, pos = [], 0
    for s in sizes:
        out.append(np.sort(perm[pos : pos + s]))
        pos += s
    return out
