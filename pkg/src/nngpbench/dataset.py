"""Tabular spatial data: CSV ingestion, dummy encoding, standardization, splits.

Every model in the package consumes a :class:`SpatialDataset`, which always
carries an explicit all-ones intercept as the first design-matrix column.
Coordinates are planar kilometres.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

KINDS = ("response", "coordinate_x", "coordinate_y", "continuous", "categorical")
INTERCEPT = "intercept"


class DataError(ValueError):
    """Raised for malformed input data or schemas."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    reference_category: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if len(self.categories) < 2:
                raise DataError(f"column {self.name!r}: categorical needs >= 2 categories")
            if len(set(self.categories)) != len(self.categories):
                raise DataError(f"column {self.name!r}: duplicated categories")
            ref = self.reference_category
            if ref is None:
                object.__setattr__(self, "reference_category", self.categories[0])
            elif ref not in self.categories:
                raise DataError(
                    f"column {self.name!r}: reference {ref!r} is not a declared category"
                )
        elif self.categories or self.reference_category is not None:
            raise DataError(f"column {self.name!r}: categories only apply to categorical columns")

    @property
    def dummy_categories(self) -> tuple[str, ...]:
        """Categories that get a dummy column (reference dropped), in declared order."""
        return tuple(c for c in self.categories if c != self.reference_category)


def validate_schema(schema: Sequence[ColumnSchema]) -> None:
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise DataError("schema has duplicated column names")
    for kind in ("response", "coordinate_x", "coordinate_y"):
        count = sum(c.kind == kind for c in schema)
        if count != 1:
            raise DataError(f"schema needs exactly one {kind} column, found {count}")


def load_schema(path: str | Path) -> list[ColumnSchema]:
    """Read a column schema from a YAML file.

    The file holds a ``columns`` mapping from column name to either a kind
    string or a mapping with ``kind``, ``categories`` and optional
    ``reference``::

        columns:
          log_rent: response
          x_km: coordinate_x
          y_km: coordinate_y
          walk_time: continuous
          structure:
            kind: categorical
            categories: [W, S, RC]
            reference: W
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"schema file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    try:
        return schema_from_dict(raw)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def schema_from_dict(raw) -> list[ColumnSchema]:
    """Schema from the ``{"columns": {...}}`` mapping that :func:`load_schema` reads."""
    if not isinstance(raw, dict) or not isinstance(raw.get("columns"), dict):
        raise DataError("expected a top-level 'columns' mapping")
    schema = []
    for name, entry in raw["columns"].items():
        if isinstance(entry, str):
            schema.append(ColumnSchema(str(name), entry))
        elif isinstance(entry, dict):
            cats = tuple(str(c) for c in entry.get("categories", ()))
            ref = entry.get("reference")
            schema.append(
                ColumnSchema(
                    str(name),
                    entry.get("kind", ""),
                    cats,
                    None if ref is None else str(ref),
                )
            )
        else:
            raise DataError(f"bad entry for column {name!r}")
    validate_schema(schema)
    return schema


def dump_schema(schema: Sequence[ColumnSchema], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        yaml.safe_dump(schema_to_dict(schema), fh, sort_keys=False, allow_unicode=True)


def schema_to_dict(schema: Sequence[ColumnSchema]) -> dict:
    columns: dict = {}
    for col in schema:
        if col.kind == "categorical":
            columns[col.name] = {
                "kind": col.kind,
                "categories": list(col.categories),
                "reference": col.reference_category,
            }
        else:
            columns[col.name] = col.kind
    return {"columns": columns}


def feature_names_for(schema: Sequence[ColumnSchema]) -> list[str]:
    names = [INTERCEPT]
    for col in schema:
        if col.kind == "continuous":
            names.append(col.name)
        elif col.kind == "categorical":
            names.extend(f"{col.name}_{cat}" for cat in col.dummy_categories)
    return names


@dataclass(frozen=True)
class SpatialDataset:
    """Response, design matrix and coordinates for n spatial observations.

    ``y`` may be ``None`` for prediction-only data read without a response
    column. ``schema`` is kept so categorical blocks can be decoded and new
    files checked against a fitted model.
    """

    y: np.ndarray | None
    X: np.ndarray
    coords: np.ndarray
    feature_names: tuple[str, ...]
    schema: tuple[ColumnSchema, ...] = field(default=(), compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        coords = np.asarray(self.coords, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError(f"X must be a non-empty 2-d matrix, got shape {X.shape}")
        n, K = X.shape
        if coords.shape != (n, 2):
            raise DataError(f"coords must have shape ({n}, 2), got {coords.shape}")
        if len(self.feature_names) != K:
            raise DataError(f"{len(self.feature_names)} feature names for {K} columns")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(coords))):
            raise DataError("X and coords must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.y is not None:
            y = np.asarray(self.y, dtype=float).reshape(-1)
            if y.shape[0] != n:
                raise DataError(f"y has {y.shape[0]} entries for {n} rows")
            if not np.all(np.isfinite(y)):
                raise DataError("y must be finite")
            object.__setattr__(self, "y", y)
        for arr in (self.X, self.coords, self.y):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def K(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: Iterable[int]) -> SpatialDataset:
        idx = np.asarray(idx, dtype=int)
        return replace(
            self,
            y=None if self.y is None else self.y[idx],
            X=self.X[idx],
            coords=self.coords[idx],
        )

    def column_block(self, name: str) -> slice:
        """Slice of X holding the columns generated from source column ``name``."""
        pos = 1
        for col in self.schema:
            width = {"continuous": 1, "categorical": len(col.dummy_categories)}.get(col.kind, 0)
            if col.name == name:
                if width == 0:
                    raise KeyError(f"{name!r} has no design-matrix columns")
                return slice(pos, pos + width)
            pos += width
        raise KeyError(name)

    def decode_categorical(self, name: str) -> list[str]:
        """Recover the category label of every row from its dummy block."""
        col = next((c for c in self.schema if c.name == name), None)
        if col is None or col.kind != "categorical":
            raise KeyError(f"{name!r} is not a categorical column")
        block = self.X[:, self.column_block(name)]
        labels = []
        cats = col.dummy_categories
        for row in block:
            hits = np.flatnonzero(row == 1.0)
            labels.append(cats[hits[0]] if len(hits) else col.reference_category)
        return labels


def encode_rows(
    records: Sequence[dict[str, str]],
    schema: Sequence[ColumnSchema],
    *,
    require_response: bool = True,
    missing: str = "error",
    first_line: int = 2,
) -> SpatialDataset:
    """Encode string records (one dict per row) into a dataset.

    ``missing="error"`` rejects the first row with a blank cell, naming its
    file line; ``missing="drop"`` silently skips such rows.
    """
    if missing not in ("error", "drop"):
        raise ValueError("missing must be 'error' or 'drop'")
    validate_schema(schema)
    response = next(c for c in schema if c.kind == "response")
    used = [c for c in schema if c.kind != "response" or require_response]
    names = feature_names_for(schema)

    ys, xs, cs = [], [], []
    for offset, rec in enumerate(records):
        line = first_line + offset
        if any((rec.get(c.name) is None or rec[c.name].strip() == "") for c in used):
            if missing == "drop":
                continue
            blank = [c.name for c in used if rec.get(c.name) is None or rec[c.name].strip() == ""]
            raise DataError(f"line {line}: missing value in column(s) {', '.join(blank)}")
        row = [1.0]
        xy = [0.0, 0.0]
        yv = None
        for col in schema:
            if col.kind == "response" and not require_response:
                continue
            cell = rec[col.name].strip()
            if col.kind == "categorical":
                if cell not in col.categories:
                    raise DataError(
                        f"line {line}: unknown category {cell!r} in column {col.name!r}"
                    )
                row.extend(1.0 if cell == cat else 0.0 for cat in col.dummy_categories)
                continue
            try:
                value = float(cell)
            except ValueError:
                raise DataError(
                    f"line {line}: non-numeric value {cell!r} in column {col.name!r}"
                ) from None
            if not math.isfinite(value):
                raise DataError(f"line {line}: non-finite value in column {col.name!r}")
            if col.kind == "continuous":
                row.append(value)
            elif col.kind == "coordinate_x":
                xy[0] = value
            elif col.kind == "coordinate_y":
                xy[1] = value
            else:
                yv = value
        xs.append(row)
        cs.append(xy)
        ys.append(yv)
    if not xs:
        raise DataError("no usable rows")
    y = np.array(ys, dtype=float) if require_response else None
    return SpatialDataset(
        y=y,
        X=np.array(xs, dtype=float).reshape(len(xs), len(names)),
        coords=np.array(cs, dtype=float),
        feature_names=tuple(names),
        schema=tuple(schema),
    )


def load_csv(
    path: str | Path,
    schema: Sequence[ColumnSchema],
    *,
    require_response: bool = True,
    missing: str = "error",
) -> SpatialDataset:
    """Read a UTF-8 CSV with a header row into a :class:`SpatialDataset`.

    Columns not named in the schema are ignored. The intercept column is
    prepended and categoricals are dummy-coded with the reference dropped.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [c.name for c in schema if c.kind != "response" or require_response]
        absent = [name for name in needed if name not in header]
        if absent:
            raise DataError(f"{path}: missing column(s) {', '.join(absent)}")
        records = list(reader)
    has_response = require_response or any(
        c.kind == "response" and c.name in header for c in schema
    )
    return encode_rows(records, schema, require_response=has_response, missing=missing)


def write_csv(ds: SpatialDataset, path: str | Path) -> None:
    """Write ``ds`` back out in the column layout its schema describes."""
    if not ds.schema:
        raise DataError("dataset has no schema to write")
    labels = {
        c.name: ds.decode_categorical(c.name) for c in ds.schema if c.kind == "categorical"
    }
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([c.name for c in ds.schema])
        for i in range(ds.n):
            out = []
            for col in ds.schema:
                if col.kind == "response":
                    out.append(repr(float(ds.y[i])))
                elif col.kind == "coordinate_x":
                    out.append(repr(float(ds.coords[i, 0])))
                elif col.kind == "coordinate_y":
                    out.append(repr(float(ds.coords[i, 1])))
                elif col.kind == "continuous":
                    out.append(repr(float(ds.X[i, ds.column_block(col.name).start])))
                else:
                    out.append(labels[col.name][i])
            writer.writerow(out)


@dataclass(frozen=True)
class Standardizer:
    """Per-column location/scale record; replays the same transform on new data."""

    columns: tuple[int, ...]
    mean: np.ndarray
    sd: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=float, copy=True)
        cols = list(self.columns)
        X[:, cols] = (X[:, cols] - self.mean) / self.sd
        return X

    def inverse_transform(self, X: np.ndarray) -> np.ndarray:
        X = np.array(X, dtype=float, copy=True)
        cols = list(self.columns)
        X[:, cols] = X[:, cols] * self.sd + self.mean
        return X


def fit_standardizer(X: np.ndarray, columns: Iterable[int]) -> Standardizer:
    X = np.asarray(X, dtype=float)
    cols = tuple(int(c) for c in columns)
    if X.shape[0] < 2:
        raise DataError("standardization needs at least 2 rows")
    mean = X[:, list(cols)].mean(axis=0)
    sd = X[:, list(cols)].std(axis=0, ddof=1)
    flat = [c for c, s in zip(cols, sd) if not s > 0]
    if flat:
        raise DataError(f"zero-variance column(s) {flat} cannot be standardized")
    return Standardizer(cols, mean, sd)


def standardize(ds: SpatialDataset, columns: Iterable[int]) -> tuple[SpatialDataset, Standardizer]:
    """Scale the selected design-matrix columns to sample mean 0 and sd 1 (ddof=1)."""
    record = fit_standardizer(ds.X, columns)
    return replace(ds, X=record.transform(ds.X)), record


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    test: np.ndarray
    seed: int


def random_split(n: int, fraction: float = 0.8, seed: int = 0) -> SplitIndices:
    """Completely random train/test partition with ``round(fraction * n)`` training rows."""
    if n < 2:
        raise ValueError("random_split needs n >= 2")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    n_train = int(math.floor(fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndices(np.sort(perm[:n_train]), np.sort(perm[n_train:]), seed)


def kfold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded assignment of ``range(n)`` to ``folds`` near-equal held-out blocks."""
    if folds < 2 or folds > n:
        raise ValueError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(block) for block in np.array_split(perm, folds)]
