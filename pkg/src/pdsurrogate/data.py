"""Tabular claim-count data: schema, CSV ingestion and fold assignment.

Categorical features (ordinal and nominal) are stored as integer codes into
``FeatureSpec.levels`` so that the whole feature block fits in one float64
matrix. That matrix is what prediction oracles receive.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

KINDS = ("continuous", "ordinal", "nominal")


class SchemaError(ValueError):
    """The schema is malformed or does not match the CSV header."""


class DataParseError(ValueError):
    """A single cell failed validation."""

    def __init__(self, row: int, column: str, message: str):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column!r}: {message}")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str
    levels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "continuous" and self.levels is not None:
            raise SchemaError(f"feature {self.name!r}: continuous features take no levels")
        if self.kind == "ordinal" and not self.levels:
            raise SchemaError(f"feature {self.name!r}: ordinal features need ordered levels")
        if self.levels is not None:
            object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"feature {self.name!r}: duplicate level labels")

    @property
    def is_categorical(self) -> bool:
        return self.kind != "continuous"

    @property
    def is_ordered(self) -> bool:
        return self.kind != "nominal"

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.levels is not None:
            out["levels"] = list(self.levels)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSpec":
        try:
            levels = d.get("levels")
            return cls(d["name"], d["kind"], tuple(levels) if levels is not None else None)
        except KeyError as exc:
            raise SchemaError(f"feature entry missing key {exc}") from None


@dataclass(frozen=True)
class Schema:
    target: str
    exposure: str
    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names")
        if self.target in names or self.exposure in names:
            raise SchemaError("target/exposure columns cannot also be features")

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "Schema":
        try:
            feats = tuple(FeatureSpec.from_dict(f) for f in raw["features"])
            return cls(raw["target"], raw["exposure"], feats)
        except KeyError as exc:
            raise SchemaError(f"schema missing key {exc}") from None

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "exposure": self.exposure,
            "features": [f.to_dict() for f in self.features],
        }


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable claim-count dataset.

    Attributes
    ----------
    features
        Feature specs; categorical specs always carry their full level list.
    X
        ``(n, p)`` float64 matrix. Continuous columns hold values, categorical
        columns hold integer codes into the spec's levels.
    y
        Claim counts, nonnegative integers (stored as float64).
    exposure
        Strictly positive exposure-to-risk per row.
    """

    features: tuple[FeatureSpec, ...]
    X: np.ndarray
    y: np.ndarray
    exposure: np.ndarray
    target_name: str = "y"
    exposure_name: str = "t"
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        t = np.ascontiguousarray(self.exposure, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.features):
            raise SchemaError("X must be (n, p) with one column per feature")
        n = X.shape[0]
        if n < 1:
            raise ValueError("dataset needs at least one row")
        if y.shape != (n,) or t.shape != (n,):
            raise ValueError("y and exposure must be length-n vectors")
        if not np.all(np.isfinite(X)):
            raise ValueError("feature values must be finite")
        if np.any(~(t > 0)) or not np.all(np.isfinite(t)):
            raise ValueError("exposure must be finite and strictly positive")
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise ValueError("target must hold nonnegative integers")
        for j, spec in enumerate(self.features):
            if spec.is_categorical:
                if spec.levels is None:
                    raise SchemaError(f"feature {spec.name!r}: categorical spec without levels")
                col = X[:, j]
                if np.any(col != np.floor(col)) or np.any(col < 0) or np.any(col >= len(spec.levels)):
                    raise ValueError(f"feature {spec.name!r}: codes out of range")
        for arr in (X, y, t):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "exposure", t)
        self._index.update({f.name: j for j, f in enumerate(self.features)})

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def schema(self) -> Schema:
        return Schema(self.target_name, self.exposure_name, self.features)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown feature {name!r}") from None

    def spec(self, name: str) -> FeatureSpec:
        return self.features[self.index(name)]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.index(name)]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features, self.X[rows], self.y[rows], self.exposure[rows],
                       self.target_name, self.exposure_name)

    def format_value(self, j: int, value: float) -> str:
        """Human-readable label for a stored value of feature ``j``."""
        spec = self.features[j]
        if spec.is_categorical:
            return spec.levels[int(value)]
        return format_number(value)

    def encode_value(self, j: int, raw) -> float:
        spec = self.features[j]
        if spec.is_categorical:
            try:
                return float(spec.levels.index(str(raw)))
            except ValueError:
                raise ValueError(f"feature {spec.name!r}: unknown level {raw!r}") from None
        return float(raw)

    def same_schema(self, other_features: Sequence[FeatureSpec]) -> bool:
        return tuple(other_features) == self.features


def format_number(v: float) -> str:
    """Shortest representation that round-trips, with integral floats shown bare."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def load_csv(path: str | Path, schema: Schema) -> Dataset:
    """Read a headered, comma-separated UTF-8 file into a :class:`Dataset`.

    Nominal features without declared levels get the sorted set of observed
    labels. Empty cells are rejected.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    col = {name: i for i, name in enumerate(header)}
    needed = [schema.target, schema.exposure] + [f.name for f in schema.features]
    missing = [c for c in needed if c not in col]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}")
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise ValueError(f"{path}: no data rows")

    def cell(i: int, r: list[str], name: str) -> str:
        k = col[name]
        if k >= len(r) or r[k].strip() == "":
            raise DataParseError(i + 1, name, "empty cell (missing values are not supported)")
        return r[k].strip()

    n = len(rows)
    y = np.empty(n)
    t = np.empty(n)
    for i, r in enumerate(rows):
        s = cell(i, r, schema.target)
        try:
            yv = float(s)
        except ValueError:
            raise DataParseError(i + 1, schema.target, f"not a number: {s!r}") from None
        if not (math.isfinite(yv) and yv >= 0 and yv == math.floor(yv)):
            raise DataParseError(i + 1, schema.target, f"target must be a nonnegative integer, got {s!r}")
        y[i] = yv
        s = cell(i, r, schema.exposure)
        try:
            tv = float(s)
        except ValueError:
            raise DataParseError(i + 1, schema.exposure, f"not a number: {s!r}") from None
        if not (math.isfinite(tv) and tv > 0):
            raise DataParseError(i + 1, schema.exposure, f"exposure must be positive, got {s!r}")
        t[i] = tv

    specs = []
    X = np.empty((n, len(schema.features)))
    for j, spec in enumerate(schema.features):
        raw = [cell(i, r, spec.name) for i, r in enumerate(rows)]
        if spec.kind == "continuous":
            for i, s in enumerate(raw):
                try:
                    v = float(s)
                except ValueError:
                    raise DataParseError(i + 1, spec.name, f"not a number: {s!r}") from None
                if not math.isfinite(v):
                    raise DataParseError(i + 1, spec.name, f"non-finite value {s!r}")
                X[i, j] = v
        else:
            if spec.levels is None:
                spec = FeatureSpec(spec.name, spec.kind, tuple(sorted(set(raw))))
            lookup = {lvl: c for c, lvl in enumerate(spec.levels)}
            for i, s in enumerate(raw):
                try:
                    X[i, j] = lookup[s]
                except KeyError:
                    raise DataParseError(i + 1, spec.name, f"unknown level {s!r}") from None
        specs.append(spec)
    return Dataset(tuple(specs), X, y, t, schema.target, schema.exposure)


def write_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([ds.target_name, ds.exposure_name] + ds.names)
        for i in range(ds.n):
            w.writerow([format_number(ds.y[i]), repr(float(ds.exposure[i]))]
                       + [ds.format_value(j, ds.X[i, j]) for j in range(ds.p)])


def write_schema(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ds.schema.to_dict(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class FoldAssignment:
    K: int
    fold_of: np.ndarray  # values in 1..K
    seed: int

    def train_test(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Row indices (train, test) for fold ``k`` in ``1..K``."""
        test = self.fold_of == k
        return np.flatnonzero(~test), np.flatnonzero(test)

    def __iter__(self):
        for k in range(1, self.K + 1):
            yield self.train_test(k)


def kfold_split(n_or_ds, K: int, seed: int) -> FoldAssignment:
    """Random, unstratified K-fold assignment; fold sizes differ by at most one."""
    n = n_or_ds.n if isinstance(n_or_ds, Dataset) else int(n_or_ds)
    if not (2 <= K <= n):
        raise ValueError(f"need 2 <= K <= n, got K={K}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % K + 1
    return FoldAssignment(K, fold_of, seed)
