"""Tabular dataset ingestion, standardization, stratified folds and synthetic data."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    class_names: tuple[str, ...]

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        n, m = X.shape
        if n < 1 or m < 2:
            raise DataError(f"need N >= 1 and m >= 2, got N={n}, m={m}")
        if len(self.class_names) < 2:
            raise DataError("need at least two classes")
        if y.shape != (n,):
            raise DataError(f"labels must have shape ({n},), got {y.shape}")
        if y.size and (y.min() < 0 or y.max() >= len(self.class_names)):
            raise DataError("label outside [0, C)")
        if not np.isfinite(X).all():
            raise DataError("features contain non-finite values")
        if len(self.feature_names) != m:
            raise DataError(f"expected {m} feature names, got {len(self.feature_names)}")
        if len(set(self.feature_names)) != m:
            raise DataError("feature names must be unique")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def fingerprint(self) -> dict:
        return {
            "N": self.n_samples,
            "m": self.n_features,
            "C": self.n_classes,
            "class_counts": {c: int(k) for c, k in zip(self.class_names, self.class_counts())},
        }

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.features[rows], self.labels[rows], self.feature_names, self.class_names)

    def with_features(self, X: np.ndarray) -> "Dataset":
        return Dataset(X, self.labels, self.feature_names, self.class_names)

    def select_features(self, cols) -> "Dataset":
        cols = list(cols)
        return Dataset(
            self.features[:, cols], self.labels,
            tuple(self.feature_names[c] for c in cols), self.class_names,
        )


def _parse_cell(text: str, row: int, col: str, impute: bool) -> float:
    t = text.strip()
    if t == "" or t.lower() in ("nan", "na", "?"):
        if impute:
            return math.nan
        raise DataError(f"missing value at row {row}, column {col!r}")
    try:
        v = float(t)
    except ValueError:
        raise DataError(f"cannot parse {text!r} as a number at row {row}, column {col!r}") from None
    if math.isinf(v):
        raise DataError(f"infinite value at row {row}, column {col!r}")
    if math.isnan(v) and not impute:
        raise DataError(f"missing value at row {row}, column {col!r}")
    return v


def _label_order(values: list[str]) -> list[str]:
    uniq = set(values)
    try:
        return sorted(uniq, key=float)
    except ValueError:
        return sorted(uniq)


def load_csv(path, label_column: str | int = -1, has_header: bool = True, impute: bool = False) -> Dataset:
    """Read a numeric CSV with one label column.

    Labels are remapped to ``0..C-1`` in sorted order (numeric sort when every
    label parses as a number); the original strings become ``class_names``.
    Row numbers in error messages are 1-based file lines.

    With ``impute=True`` empty/NaN cells are replaced by the column mean;
    otherwise they are rejected.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0] if has_header else [f"x{i}" for i in range(len(rows[0]))]
    body = rows[1:] if has_header else rows
    header = [h.strip() for h in header]

    if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
        if label_column not in header:
            raise DataError(f"{path}: label column {label_column!r} not found")
        li = header.index(label_column)
    else:
        li = int(label_column)
        if not -len(header) <= li < len(header):
            raise DataError(f"{path}: label column index {li} out of range")
        li %= len(header)

    feat_cols = [i for i in range(len(header)) if i != li]
    names = [header[i] for i in feat_cols]
    first_line = 2 if has_header else 1
    X = np.empty((len(body), len(feat_cols)))
    raw_labels = []
    for r, row in enumerate(body):
        line = r + first_line
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} fields, expected {len(header)}")
        raw_labels.append(row[li].strip())
        for c, ci in enumerate(feat_cols):
            X[r, c] = _parse_cell(row[ci], line, header[ci], impute)

    if impute and np.isnan(X).any():
        col_mean = np.nanmean(X, axis=0)
        if np.isnan(col_mean).any():
            raise DataError(f"{path}: a column has no observed values to impute from")
        X = np.where(np.isnan(X), col_mean, X)

    classes = _label_order(raw_labels)
    if len(classes) < 2:
        raise DataError(f"{path}: only one class present ({classes[0]!r})")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[v] for v in raw_labels], dtype=np.int64)
    return Dataset(X, y, tuple(names), tuple(classes))


@dataclass(frozen=True)
class ScalerStats:
    """Per-feature mean and population standard deviation."""

    mean: np.ndarray
    std: np.ndarray
    zero_variance: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "std", _frozen(np.asarray(self.std, dtype=np.float64)))
        if self.zero_variance is None:
            object.__setattr__(self, "zero_variance", _frozen(np.zeros(self.mean.shape, bool)))
        if (self.std <= 0).any():
            raise DataError("scaler std entries must be positive")

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) * self.std + self.mean


def fit_scaler(X: np.ndarray) -> ScalerStats:
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    # relative threshold so tiny float noise on a constant column counts as constant
    zero = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero-variance feature(s); std set to 1", stacklevel=2)
    std = np.where(zero, 1.0, std)
    return ScalerStats(mean, std, zero)


def standardize(d: Dataset, stats: ScalerStats | None = None) -> tuple[Dataset, ScalerStats]:
    """Z-score features. Fits on ``d`` unless ``stats`` is given."""
    stats = fit_scaler(d.features) if stats is None else stats
    X = stats.transform(d.features)
    X[:, stats.zero_variance] = 0.0
    return d.with_features(X), stats


@dataclass(frozen=True)
class FoldSplit:
    fold: int
    train: np.ndarray
    test: np.ndarray


def stratified_kfold(d: Dataset | np.ndarray, k: int, seed: int) -> list[FoldSplit]:
    """Stratified k-fold partition, deterministic in ``(labels, k, seed)``.

    Rows of each class are shuffled, the classes are laid end to end, and
    position ``p`` goes to fold ``p mod k``. That keeps every class within one
    sample of ``count / k`` per fold and the fold sizes within one of ``N / k``.
    """
    labels = d.labels if isinstance(d, Dataset) else np.asarray(d)
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    counts = np.bincount(labels)
    small = [c for c, n in enumerate(counts) if 0 < n < k]
    if small:
        raise DataError(f"class(es) {small} have fewer than k={k} members")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in range(len(counts))])
    fold_of = np.empty(labels.size, dtype=np.int64)
    fold_of[order] = np.arange(order.size) % k
    out = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        out.append(FoldSplit(f, _frozen(train), _frozen(test)))
    return out


def make_synthetic(
    n: int,
    m: int,
    c: int,
    redundancy_groups: int,
    noise: float,
    seed: int,
    class_sep: float = 2.0,
) -> Dataset:
    """Class-conditional Gaussian data with redundant feature groups.

    Recipe: labels cycle ``0..c-1`` and are shuffled. Each group ``g`` has a
    latent signal ``s_g = mu[y, g] + N(0, 1)`` with class means
    ``mu ~ N(0, class_sep^2)``. Feature ``j`` belongs to group ``j % groups``
    and equals its group's signal plus ``noise * N(0, 1)``, so ``noise=0``
    makes every feature in a group identical.
    """
    if n < 1 or c < 2 or m < 2:
        raise DataError("need n >= 1, c >= 2, m >= 2")
    if not 1 <= redundancy_groups <= m:
        raise DataError(f"need 1 <= redundancy_groups <= m, got {redundancy_groups}")
    if noise < 0:
        raise DataError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    y = rng.permutation(np.arange(n) % c)
    mu = rng.normal(0.0, class_sep, size=(c, redundancy_groups))
    signal = mu[y] + rng.normal(size=(n, redundancy_groups))
    group = np.arange(m) % redundancy_groups
    X = signal[:, group] + noise * rng.normal(size=(n, m))
    return Dataset(X, y, tuple(f"f{j}" for j in range(m)), tuple(f"class_{i}" for i in range(c)))
