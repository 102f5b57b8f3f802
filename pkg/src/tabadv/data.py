"""Datasets, splits and the invertible min-max / one-hot feature maps."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .constraints import FeatureSchema


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Column-oriented table: continuous columns are float arrays, categoricals are str arrays."""

    schema: FeatureSchema
    columns: dict[str, np.ndarray]
    y: np.ndarray
    classes: tuple[str, ...]
    name: str = "dataset"

    def __post_init__(self):
        n = len(self.y)
        for f in self.schema.features:
            col = self.columns.get(f.name)
            if col is None:
                raise DataError(f"dataset misses column {f.name!r}")
            if len(col) != n:
                raise DataError(f"column {f.name!r} has {len(col)} rows, labels have {n}")
            if not f.is_continuous:
                bad = set(col.tolist()) - set(f.categories)
                if bad:
                    raise DataError(f"column {f.name!r} holds values outside its categories: {sorted(bad)}")
        if n and (self.y.min() < 0 or self.y.max() >= len(self.classes)):
            raise DataError("label index outside the declared label set")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.schema, {k: v[idx] for k, v in self.columns.items()}, self.y[idx], self.classes, self.name)

    def records(self) -> list[dict]:
        names = self.schema.names
        cols = [self.columns[n].tolist() for n in names]
        return [dict(zip(names, row)) for row in zip(*cols)]

    def continuous_array(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = self.schema.continuous if names is None else names
        return np.stack([self.columns[n] for n in names], axis=1) if names else np.zeros((len(self), 0))


def load_csv(path, schema: FeatureSchema, label_column: str, classes: Sequence[str] | None = None, name: str | None = None) -> Dataset:
    """Read a headered CSV; row numbers in errors are file line numbers (header is line 1)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        for col in [*schema.names, label_column]:
            if col not in header:
                raise DataError(f"missing column {col!r} in {path}")
        pos = {h: i for i, h in enumerate(header)}
        raw: dict[str, list] = {n: [] for n in schema.names}
        labels: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"row {lineno} has {len(row)} cells, header has {len(header)}")
            for f in schema.features:
                cell = row[pos[f.name]]
                if f.is_continuous:
                    try:
                        raw[f.name].append(float(cell))
                    except ValueError:
                        raise DataError(f"unparseable value {cell!r} in column {f.name!r} at row {lineno}") from None
                else:
                    if cell not in f.categories:
                        raise DataError(f"value {cell!r} at row {lineno} is not a category of {f.name!r}")
                    raw[f.name].append(cell)
            labels.append(row[pos[label_column]])
    if classes is None:
        classes = tuple(sorted(set(labels)))
    classes = tuple(str(c) for c in classes)
    index = {c: i for i, c in enumerate(classes)}
    try:
        y = np.array([index[v] for v in labels], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"label {exc.args[0]!r} outside the label set {classes}") from None
    columns = {
        f.name: np.array(raw[f.name], dtype=np.float64 if f.is_continuous else object)
        for f in schema.features
    }
    return Dataset(schema, columns, y, classes, name or path.stem)


def save_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*dataset.schema.names, label_column])
        cols = [dataset.columns[n] for n in dataset.schema.names]
        for i in range(len(dataset)):
            w.writerow([repr(float(c[i])) if isinstance(c[i], float) else c[i] for c in cols] + [dataset.classes[dataset.y[i]]])


# --- transforms ------------------------------------------------------------------

@dataclass
class TransformPipeline:
    """Per-feature min-max scaling (continuous) and one-hot encoding (categorical).

    Encoded layout follows schema order: one column per continuous feature, one
    column per category for categoricals. The same layout is used in "raw"
    space (unscaled continuous values) so that the scaling is a per-column
    affine map that can sit inside a differentiable graph.
    """

    schema: FeatureSchema
    kind: str = "generator"
    mins: dict[str, float] = field(default_factory=dict)
    maxs: dict[str, float] = field(default_factory=dict)
    fitted: bool = False

    @property
    def layout(self) -> list[tuple[str, int, int]]:
        """``(feature, start, stop)`` column spans in encoded space."""
        spans, pos = [], 0
        for f in self.schema.features:
            width = 1 if f.is_continuous else len(f.categories)
            spans.append((f.name, pos, pos + width))
            pos += width
        return spans

    @property
    def width(self) -> int:
        return self.layout[-1][2]

    def continuous_columns(self) -> list[int]:
        return [start for (name, start, _), f in zip(self.layout, self.schema.features) if f.is_continuous]

    def categorical_blocks(self) -> list[tuple[str, int, int]]:
        return [span for span, f in zip(self.layout, self.schema.features) if not f.is_continuous]

    def _check(self) -> None:
        if not self.fitted:
            raise DataError("pipeline used before fit")

    def scale_shift(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-column ``(scale, shift)`` with ``encoded = raw * scale + shift``."""
        self._check()
        scale = np.ones(self.width)
        shift = np.zeros(self.width)
        for (name, start, _), f in zip(self.layout, self.schema.features):
            if f.is_continuous:
                lo, hi = self.mins[name], self.maxs[name]
                if hi == lo:
                    scale[start], shift[start] = 0.0, 0.5
                else:
                    scale[start], shift[start] = 1.0 / (hi - lo), -lo / (hi - lo)
        return scale, shift

    def _inverse_scale_shift(self) -> tuple[np.ndarray, np.ndarray]:
        self._check()
        scale = np.ones(self.width)
        shift = np.zeros(self.width)
        for (name, start, _), f in zip(self.layout, self.schema.features):
            if f.is_continuous:
                lo, hi = self.mins[name], self.maxs[name]
                scale[start], shift[start] = hi - lo, lo
        return scale, shift

    def encode_raw(self, data: Dataset | Mapping[str, np.ndarray] | Sequence[Mapping]) -> np.ndarray:
        """Raw-space encoding: continuous values unscaled, categoricals one-hot."""
        cols = _as_columns(data, self.schema)
        n = len(next(iter(cols.values())))
        out = np.zeros((n, self.width))
        for (name, start, stop), f in zip(self.layout, self.schema.features):
            if f.is_continuous:
                out[:, start] = np.asarray(cols[name], dtype=np.float64)
            else:
                index = {c: i for i, c in enumerate(f.categories)}
                try:
                    hot = np.array([index[v] for v in cols[name]], dtype=np.int64)
                except KeyError as exc:
                    raise DataError(f"value {exc.args[0]!r} is not a category of {name!r}") from None
                out[np.arange(n), start + hot] = 1.0
        return out

    def decode_raw(self, array: np.ndarray) -> dict[str, np.ndarray]:
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2 or array.shape[1] != self.width:
            raise DataError(f"expected width {self.width}, got shape {array.shape}")
        out = {}
        for (name, start, stop), f in zip(self.layout, self.schema.features):
            if f.is_continuous:
                out[name] = array[:, start].copy()
            else:
                # argmax keeps the lowest index on ties
                idx = np.argmax(array[:, start:stop], axis=1)
                out[name] = np.array([f.categories[i] for i in idx], dtype=object)
        return out

    def transform(self, data) -> np.ndarray:
        scale, shift = self.scale_shift()
        return self.encode_raw(data) * scale + shift

    def inverse_transform(self, array: np.ndarray) -> dict[str, np.ndarray]:
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2 or array.shape[1] != self.width:
            raise DataError(f"expected width {self.width}, got shape {array.shape}")
        scale, shift = self._inverse_scale_shift()
        return self.decode_raw(array * scale + shift)

    def forward_tensor(self, raw: Tensor) -> Tensor:
        """Differentiable raw -> encoded map (affine on continuous columns, identity on one-hot)."""
        scale, shift = self.scale_shift()
        return ad.add(ad.mul(raw, scale[None, :]), shift[None, :])

    def inverse_tensor(self, encoded: Tensor) -> Tensor:
        scale, shift = self._inverse_scale_shift()
        return ad.add(ad.mul(encoded, scale[None, :]), shift[None, :])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mins": self.mins, "maxs": self.maxs, "schema": self.schema.to_dict()}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TransformPipeline":
        schema = FeatureSchema.from_dict(doc["schema"])
        return cls(schema, doc["kind"], {k: float(v) for k, v in doc["mins"].items()}, {k: float(v) for k, v in doc["maxs"].items()}, True)


def _as_columns(data, schema: FeatureSchema) -> Mapping[str, np.ndarray]:
    if isinstance(data, Dataset):
        return data.columns
    if isinstance(data, Mapping):
        return data
    rows = list(data)
    if not rows:
        raise DataError("no records")
    return {n: [r[n] for r in rows] for n in schema.names}


def fit(kind: str, dataset: Dataset) -> TransformPipeline:
    """Fit a generator-space (f) or classifier-space (g) pipeline on ``dataset``."""
    if kind not in ("generator", "classifier"):
        raise ValueError(f"unknown pipeline kind {kind!r}")
    if len(dataset) == 0:
        raise DataError("cannot fit a pipeline on an empty dataset")
    mins, maxs = {}, {}
    for name in dataset.schema.continuous:
        col = dataset.columns[name]
        mins[name], maxs[name] = float(col.min()), float(col.max())
    return TransformPipeline(dataset.schema, kind, mins, maxs, True)


# --- splits -----------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    stratify: bool = False
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValueError("split fractions must be three positive numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def _split_counts(n: int, fractions) -> tuple[int, int, int]:
    n_val = int(round(fractions[1] * n))
    n_test = int(round(fractions[2] * n))
    return n - n_val - n_test, n_val, n_test


def split_indices(y: np.ndarray, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = len(y)
    if n < 3:
        raise DataError("need at least 3 rows to split")
    rng = np.random.default_rng(spec.seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    groups = [np.flatnonzero(y == c) for c in np.unique(y)] if spec.stratify else [np.arange(n)]
    for members in groups:
        members = members[rng.permutation(len(members))]
        a, b, _ = _split_counts(len(members), spec.fractions)
        parts[0].append(members[:a])
        parts[1].append(members[a : a + b])
        parts[2].append(members[a + b :])
    out = tuple(np.sort(np.concatenate(p)) for p in parts)
    for label, idx in zip(("train", "validation", "test"), out):
        if len(idx) == 0:
            raise DataError(f"split fractions leave the {label} split empty")
    return out  # type: ignore[return-value]


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    tr, va, te = split_indices(dataset.y, spec)
    return dataset.subset(tr), dataset.subset(va), dataset.subset(te)
