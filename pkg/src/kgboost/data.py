"""Tabular input, equal-count feature quantization and the split universe."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import EmptyDatasetError, ParseError, ShapeError


@dataclass(frozen=True)
class RawDataset:
    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.targets, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise EmptyDatasetError(f"need an N x d feature matrix with N, d >= 1, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise ShapeError(f"targets have shape {y.shape}, expected ({x.shape[0]},)")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ParseError("features and targets must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "targets", y)
        if self.feature_names is not None:
            names = tuple(str(s) for s in self.feature_names)
            if len(names) != x.shape[1]:
                raise ShapeError("feature_names length does not match feature count")
            object.__setattr__(self, "feature_names", names)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def clip_targets(y: np.ndarray, bound: float) -> np.ndarray:
    """Scale ``y`` so that ``sum(y**2) / (2N) <= bound**2``.

    The whole vector is rescaled (not truncated per element), which keeps
    the relative structure of the targets.
    """
    if bound <= 0:
        raise ValueError("clip bound must be positive")
    y = np.asarray(y, dtype=np.float64)
    energy = float(np.dot(y, y)) / (2 * len(y))
    if energy <= bound**2:
        return y.copy()
    return y * (bound / math.sqrt(energy))


def _read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDatasetError(f"{path}: file is empty") from None
        rows = [row for row in reader if row]
    return [h.strip() for h in header], rows


def _parse_matrix(path, header, rows) -> np.ndarray:
    out = np.empty((len(rows), len(header)), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i + 2} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                out[i, j] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {i + 2}, column {header[j]!r}: cannot parse {cell!r} as a number"
                ) from None
            if not math.isfinite(out[i, j]):
                raise ParseError(f"{path}: row {i + 2}, column {header[j]!r}: non-finite value")
    return out


def _column_index(header: Sequence[str], column: str | int) -> int:
    if isinstance(column, int):
        idx = column
    elif column in header:
        return list(header).index(column)
    else:
        try:
            idx = int(column)
        except ValueError:
            raise ParseError(f"no column named {column!r}; header is {list(header)}") from None
    if not -len(header) <= idx < len(header):
        raise ParseError(f"column index {column} out of range for {len(header)} columns")
    return idx % len(header)


def load_csv(path, target_column: str | int, clip_R: float | None = None) -> RawDataset:
    """Read a numeric CSV with a header row into a :class:`RawDataset`."""
    path = Path(path)
    header, rows = _read_rows(path)
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    t = _column_index(header, target_column)
    mat = _parse_matrix(path, header, rows)
    keep = [j for j in range(len(header)) if j != t]
    if not keep:
        raise EmptyDatasetError(f"{path}: no feature columns besides the target")
    y = mat[:, t]
    if clip_R is not None:
        y = clip_targets(y, clip_R)
    return RawDataset(mat[:, keep], y, tuple(header[j] for j in keep))


def load_features_csv(path, columns: Sequence[str] | None = None) -> tuple[np.ndarray, list[str]]:
    """Read a numeric CSV; optionally select ``columns`` by name."""
    path = Path(path)
    header, rows = _read_rows(path)
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    mat = _parse_matrix(path, header, rows)
    if columns is None:
        return mat, header
    missing = [c for c in columns if c not in header]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")
    idx = [header.index(c) for c in columns]
    return mat[:, idx], list(columns)


class SplitCandidate(NamedTuple):
    """Split ``(feature, bin)``: a row goes right iff its bin on ``feature`` exceeds ``bin``."""

    feature: int
    bin: int


@dataclass(frozen=True)
class FeatureQuantizer:
    thresholds: tuple[np.ndarray, ...]
    feature_names: tuple[str, ...] | None = None

    @property
    def n_features(self) -> int:
        return len(self.thresholds)

    @property
    def n_per_feature(self) -> np.ndarray:
        return np.array([len(t) for t in self.thresholds], dtype=np.int64)

    def transform(self, features) -> np.ndarray:
        """Bin indices: the number of thresholds strictly below each value.

        A value equal to a threshold stays on the left of that split.
        Values outside the training range land in the boundary bins.
        """
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeError(f"expected rows with {self.n_features} features, got shape {x.shape}")
        out = np.empty(x.shape, dtype=np.int64)
        for j, t in enumerate(self.thresholds):
            out[:, j] = np.searchsorted(t, x[:, j], side="left")
        return out

    def to_dict(self) -> dict:
        names = self.feature_names or tuple(str(j) for j in range(self.n_features))
        return {"thresholds": {name: [float(v) for v in t] for name, t in zip(names, self.thresholds)}}

    @classmethod
    def from_dict(cls, doc: dict) -> "FeatureQuantizer":
        items = list(doc["thresholds"].items())
        return cls(
            tuple(np.asarray(v, dtype=np.float64) for _, v in items),
            tuple(k for k, _ in items),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureQuantizer":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _nearest_rank_thresholds(values: np.ndarray, n: int) -> np.ndarray:
    v = np.sort(values)
    size = len(v)
    # ceil(i * size / (n + 1)) in integer arithmetic
    ranks = [(i * size + n) // (n + 1) for i in range(1, n + 1)]
    cuts = np.unique(v[[max(r, 1) - 1 for r in ranks]])
    # a cut at the maximum sends every sample left and is useless
    return cuts[cuts < v[-1]]


def fit_quantizer(data: RawDataset | np.ndarray, n: int) -> FeatureQuantizer:
    """Equal-count thresholds at the nearest-rank quantiles ``i/(n+1)``.

    Repeated values collapse, so a feature can end up with fewer than ``n``
    thresholds; a constant feature gets none.
    """
    if n < 1:
        raise ValueError(f"number of thresholds must be >= 1, got {n}")
    if isinstance(data, RawDataset):
        x, names = data.features, data.feature_names
    else:
        x, names = np.asarray(data, dtype=np.float64), None
        if x.ndim == 1:
            x = x[:, None]
    return FeatureQuantizer(tuple(_nearest_rank_thresholds(x[:, j], n) for j in range(x.shape[1])), names)


@dataclass(frozen=True)
class BinnedDataset:
    bins: np.ndarray
    targets: np.ndarray
    n_per_feature: np.ndarray
    R: float | None = None
    quantizer: FeatureQuantizer | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        b = np.ascontiguousarray(self.bins, dtype=np.int64)
        y = np.ascontiguousarray(self.targets, dtype=np.float64)
        npf = np.asarray(self.n_per_feature, dtype=np.int64)
        if b.ndim != 2 or b.shape[0] < 1:
            raise EmptyDatasetError(f"bins must be a non-empty N x d matrix, got shape {b.shape}")
        if y.shape != (b.shape[0],):
            raise ShapeError(f"targets have shape {y.shape}, expected ({b.shape[0]},)")
        if npf.shape != (b.shape[1],):
            raise ShapeError("n_per_feature must have one entry per feature")
        if (b < 0).any() or (b > npf[None, :]).any():
            raise ValueError("bin index outside [0, n_per_feature]")
        object.__setattr__(self, "bins", b)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "n_per_feature", npf)

    @property
    def n_samples(self) -> int:
        return self.bins.shape[0]

    @property
    def n_features(self) -> int:
        return self.bins.shape[1]

    def candidates(self) -> list[SplitCandidate]:
        """All splits ``(j, k)`` with ``k < n_per_feature[j]``, in lexicographic order."""
        return [SplitCandidate(j, k) for j in range(self.n_features) for k in range(int(self.n_per_feature[j]))]

    def candidate_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        cands = self.candidates()
        feat = np.array([c.feature for c in cands], dtype=np.int64)
        kbin = np.array([c.bin for c in cands], dtype=np.int64)
        return feat, kbin

    def with_targets(self, targets) -> "BinnedDataset":
        return BinnedDataset(self.bins, targets, self.n_per_feature, self.R, self.quantizer)

    def bin_rows(self, rows) -> np.ndarray:
        """Bin raw feature rows with the training quantizer."""
        if self.quantizer is None:
            raise ValueError("dataset was built without a quantizer")
        return self.quantizer.transform(rows)


def quantize(data: RawDataset, q: FeatureQuantizer, R: float | None = None) -> BinnedDataset:
    if data.n_features != q.n_features:
        raise ShapeError(f"dataset has {data.n_features} features, quantizer expects {q.n_features}")
    return BinnedDataset(q.transform(data.features), data.targets, q.n_per_feature, R, q)


def bin_dataset(data: RawDataset, n: int, R: float | None = None) -> BinnedDataset:
    """Fit a quantizer on ``data`` and quantize it in one call."""
    return quantize(data, fit_quantizer(data, n), R)
