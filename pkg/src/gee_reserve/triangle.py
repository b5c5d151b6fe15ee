"""Run-off triangles: parsing, (de)cumulation and accident-year clusters.

A triangle of size ``n`` is stored as an ``n x n`` float array whose
unobserved lower-right cells hold NaN. Accident year ``i`` and development
year ``j`` are 1-based everywhere in the public API; cell ``(i, j)`` is
observed iff ``i + j <= n + 1``.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence, TextIO, Union

import numpy as np

from .errors import DuplicateCell, NonNumericValue, RaggedShape, WrongKind

__all__ = [
    "Kind",
    "Triangle",
    "Cluster",
    "ClusterSet",
    "parse_triangle",
    "read_triangle",
    "serialize_triangle",
    "cumulate",
    "decumulate",
    "to_clusters",
    "observed_mask",
]


class Kind(str, Enum):
    INCREMENTAL = "incremental"
    CUMULATIVE = "cumulative"

    @classmethod
    def coerce(cls, value: Union[str, "Kind"]) -> "Kind":
        if isinstance(value, cls):
            return value
        aliases = {"inc": cls.INCREMENTAL, "cum": cls.CUMULATIVE}
        key = str(value).lower()
        return aliases.get(key) or cls(key)


def observed_mask(n: int) -> np.ndarray:
    """Boolean ``n x n`` mask, True where ``i + j <= n + 1`` (1-based)."""
    idx = np.arange(n)
    return idx[:, None] + idx[None, :] <= n - 1


@dataclass(frozen=True, eq=False)
class Triangle:
    """Immutable run-off triangle.

    Parameters
    ----------
    values : array_like
        ``n x n`` array; entries outside the observed triangle must be NaN
        and every observed entry must be finite.
    kind : Kind
        Whether cells hold incremental or cumulative amounts.
    """

    values: np.ndarray
    kind: Kind = Kind.INCREMENTAL

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise RaggedShape(f"triangle must be a non-empty square array, got shape {arr.shape}")
        mask = observed_mask(arr.shape[0])
        if not np.all(np.isfinite(arr[mask])):
            raise RaggedShape("observed cell missing or non-finite")
        if not np.all(np.isnan(arr[~mask])):
            raise RaggedShape("cell present outside the run-off triangle (i + j > n + 1)")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "kind", Kind.coerce(self.kind))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def n_cells(self) -> int:
        return self.n * (self.n + 1) // 2

    def __getitem__(self, ij: tuple[int, int]) -> float:
        i, j = ij
        if not (1 <= i <= self.n and 1 <= j <= self.n + 1 - i):
            raise KeyError(ij)
        return float(self.values[i - 1, j - 1])

    def cells(self) -> Iterator[tuple[int, int, float]]:
        """Yield ``(i, j, amount)`` for every observed cell, row by row."""
        for i in range(1, self.n + 1):
            for j in range(1, self.n + 2 - i):
                yield i, j, float(self.values[i - 1, j - 1])

    def row(self, i: int) -> np.ndarray:
        return self.values[i - 1, : self.n + 1 - i]

    def scaled(self, factor: float) -> "Triangle":
        return Triangle(self.values * factor, self.kind)

    def __eq__(self, other):
        if not isinstance(other, Triangle):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.values, other.values, equal_nan=True)

    def __hash__(self):
        return hash((self.kind, self.values.tobytes()))

    def __repr__(self):
        return f"Triangle(n={self.n}, kind={self.kind.value})"


def _to_float(token: str, where: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise NonNumericValue(f"non-numeric value {token!r} at {where}") from None
    if not np.isfinite(value):
        raise NonNumericValue(f"non-finite value {token!r} at {where}")
    return value


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


_DEV_LABEL = re.compile(r"^(dev_?)?0*1$", re.IGNORECASE)


def _from_cells(cells: dict[tuple[int, int], float], kind: Kind) -> Triangle:
    if not cells:
        raise RaggedShape("no observed cells")
    n = max(i for i, _ in cells)
    if any(i < 1 or j < 1 for i, j in cells):
        raise RaggedShape("indices must be positive")
    arr = np.full((n, n), np.nan)
    for (i, j), v in cells.items():
        if i + j > n + 1:
            raise RaggedShape(f"cell ({i},{j}) lies outside a triangle with n={n}")
        arr[i - 1, j - 1] = v
    missing = [(i, j) for i in range(1, n + 1) for j in range(1, n + 2 - i) if (i, j) not in cells]
    if missing:
        raise RaggedShape(f"missing observed cells, e.g. {missing[:3]}")
    return Triangle(arr, kind)


def _parse_long(rows: list[list[str]], kind: Kind) -> Triangle:
    header = [c.strip().lower() for c in rows[0]]
    if header != ["i", "j", "value"]:
        raise NonNumericValue(f"long format needs header 'i,j,value', got {rows[0]!r}")
    cells: dict[tuple[int, int], float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise RaggedShape(f"line {lineno}: expected 3 fields, got {len(row)}")
        i_f = _to_float(row[0], f"line {lineno}")
        j_f = _to_float(row[1], f"line {lineno}")
        if i_f != int(i_f) or j_f != int(j_f):
            raise NonNumericValue(f"line {lineno}: indices must be integers")
        key = (int(i_f), int(j_f))
        if key in cells:
            raise DuplicateCell(f"cell {key} given twice (line {lineno})")
        cells[key] = _to_float(row[2], f"line {lineno}")
    return _from_cells(cells, kind)


def _parse_wide(rows: list[list[str]], kind: Kind) -> Triangle:
    has_label = False
    first = [c.strip() for c in rows[0]]
    if any(c and not _is_number(c) for c in first):
        # header row; a leading column is a label column unless it names dev year 1
        has_label = bool(first) and not _DEV_LABEL.match(first[0])
        rows = rows[1:]
    if not rows:
        raise RaggedShape("no data rows")
    cells: dict[tuple[int, int], float] = {}
    for i, row in enumerate(rows, start=1):
        fields = [c.strip() for c in (row[1:] if has_label else row)]
        # trailing empties mark unobserved cells
        while fields and fields[-1] == "":
            fields.pop()
        for j, token in enumerate(fields, start=1):
            if token == "":
                raise RaggedShape(f"row {i}: empty cell before the last observed cell")
            cells[(i, j)] = _to_float(token, f"row {i}, column {j}")
    n = len(rows)
    for i in range(1, n + 1):
        width = sum(1 for (a, _) in cells if a == i)
        if width != n + 1 - i:
            raise RaggedShape(f"row {i} has {width} observed cells, expected {n + 1 - i}")
    return _from_cells(cells, kind)


def parse_triangle(
    source: Union[str, bytes, TextIO, io.IOBase],
    format: str = "wide",
    kind: Union[str, Kind] = Kind.INCREMENTAL,
) -> Triangle:
    """Parse a triangle from CSV text.

    Parameters
    ----------
    source : str, bytes or text/binary stream
        CSV content. ``wide``: one row per accident year, one column per
        development year, trailing cells empty, optional header row and
        optional leading label column. ``long``: header ``i,j,value``.
    format : {"wide", "long"}
    kind : {"incremental", "cumulative"}

    Raises
    ------
    RaggedShape, DuplicateCell, NonNumericValue
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8-sig")
    text = source.lstrip("﻿")
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if not rows:
        raise RaggedShape("empty input")
    kind = Kind.coerce(kind)
    if format == "long":
        return _parse_long(rows, kind)
    if format == "wide":
        return _parse_wide(rows, kind)
    raise ValueError(f"unknown format {format!r}")


def read_triangle(path: Union[str, Path], format: str = "wide", kind: Union[str, Kind] = Kind.INCREMENTAL) -> Triangle:
    with open(path, encoding="utf-8-sig", newline="") as fh:
        return parse_triangle(fh, format=format, kind=kind)


def serialize_triangle(t: Triangle, format: str = "wide") -> str:
    """Inverse of :func:`parse_triangle` (lossless: floats written with ``repr``)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    if format == "long":
        writer.writerow(["i", "j", "value"])
        for i, j, v in t.cells():
            writer.writerow([i, j, repr(v)])
    elif format == "wide":
        writer.writerow([f"dev_{j}" for j in range(1, t.n + 1)])
        for i in range(1, t.n + 1):
            obs = [repr(float(v)) for v in t.row(i)]
            writer.writerow(obs + [""] * (i - 1))
    else:
        raise ValueError(f"unknown format {format!r}")
    return out.getvalue()


def cumulate(t: Triangle) -> Triangle:
    if t.kind is not Kind.INCREMENTAL:
        raise WrongKind("cumulate needs an incremental triangle")
    mask = observed_mask(t.n)
    out = np.cumsum(np.where(mask, t.values, 0.0), axis=1)
    return Triangle(np.where(mask, out, np.nan), Kind.CUMULATIVE)


def decumulate(t: Triangle) -> Triangle:
    if t.kind is not Kind.CUMULATIVE:
        raise WrongKind("decumulate needs a cumulative triangle")
    out = t.values.copy()
    out[:, 1:] = t.values[:, 1:] - t.values[:, :-1]
    return Triangle(out, Kind.INCREMENTAL)


def as_incremental(t: Triangle) -> Triangle:
    return t if t.kind is Kind.INCREMENTAL else decumulate(t)


@dataclass(frozen=True, eq=False)
class Cluster:
    """One accident year: observed increments and their design rows."""

    i: int
    x: np.ndarray
    z: np.ndarray

    @property
    def size(self) -> int:
        return len(self.x)

    @property
    def cells(self) -> list[tuple[int, int]]:
        return [(self.i, j) for j in range(1, self.size + 1)]


@dataclass(frozen=True, eq=False)
class ClusterSet:
    clusters: tuple[Cluster, ...]
    n: int
    design: object = field(repr=False, default=None)

    @property
    def sizes(self) -> list[int]:
        return [c.size for c in self.clusters]

    @property
    def n_obs(self) -> int:
        return sum(self.sizes)

    @property
    def p(self) -> int:
        return self.clusters[0].z.shape[1]

    def __iter__(self):
        return iter(self.clusters)

    def __len__(self):
        return len(self.clusters)

    def permuted(self, order: Sequence[int]) -> "ClusterSet":
        return ClusterSet(tuple(self.clusters[k] for k in order), self.n, self.design)

    def scaled(self, factor: float) -> "ClusterSet":
        return ClusterSet(tuple(Cluster(c.i, c.x * factor, c.z) for c in self.clusters), self.n, self.design)


def to_clusters(t: Triangle, design) -> ClusterSet:
    """Split an incremental triangle into accident-year clusters.

    ``design`` is a :class:`gee_reserve.model.DesignBuilder` (anything with a
    ``matrix(cells)`` method returning one covariate row per cell works).
    """
    if t.kind is not Kind.INCREMENTAL:
        raise WrongKind("to_clusters needs an incremental triangle")
    clusters = []
    for i in range(1, t.n + 1):
        x = np.array(t.row(i), dtype=np.float64)
        x.flags.writeable = False
        z = np.asarray(design.matrix([(i, j) for j in range(1, t.n + 2 - i)]), dtype=np.float64)
        z.flags.writeable = False
        clusters.append(Cluster(i, x, z))
    return ClusterSet(tuple(clusters), t.n, design)
