"""Datasets, CSV ingestion, normalization, splits and synthetic generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .tree import TASKS


class DataError(ValueError):
    """Unreadable or inconsistent data."""


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: str
    n_classes: int = 0
    feature_names: list[str] = field(default_factory=list)
    name: str = "data"
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}")
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if self.task == "regression":
            y = np.asarray(self.y, dtype=float)
            self.y = y.reshape(len(y), -1)
        else:
            self.y = np.asarray(self.y, dtype=int).reshape(-1)
            if not self.n_classes:
                self.n_classes = int(self.y.max()) + 1 if len(self.y) else 0
            if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
                raise DataError("class labels must lie in 0..K-1")
        if len(self.X) != len(self.y):
            raise DataError(f"{len(self.X)} feature rows but {len(self.y)} targets")
        if np.isnan(self.X).any() or (self.task == "regression" and np.isnan(self.y).any()):
            raise DataError("dataset contains NaN")
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(self.X.shape[1])]

    def __len__(self):
        return len(self.X)

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @property
    def output_dim(self) -> int:
        if self.task == "regression":
            return self.y.shape[1]
        return 1 if self.task == "binary" else self.n_classes

    @property
    def augmented(self) -> np.ndarray:
        """Features with the constant bias coordinate prepended."""
        return np.hstack([np.ones((len(self.X), 1)), self.X])

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=int)
        return replace(self, X=self.X[idx], y=self.y[idx])

    def strata(self) -> np.ndarray | None:
        return None if self.task == "regression" else self.y


@dataclass(frozen=True)
class FoldPlan:
    pairs: tuple[tuple[np.ndarray, np.ndarray], ...]
    seed: int

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    y_mean: np.ndarray | None = None
    y_std: np.ndarray | None = None

    def transform(self, data: Dataset) -> Dataset:
        X = (data.X - self.mean) / self.std
        if data.task == "regression" and self.y_mean is not None:
            return replace(data, X=X, y=(data.y - self.y_mean) / self.y_std)
        return replace(data, X=X)

    def inverse_targets(self, y: np.ndarray) -> np.ndarray:
        if self.y_mean is None:
            return y
        return np.asarray(y) * self.y_std + self.y_mean


def load_csv(path, task: str, name: str | None = None) -> Dataset:
    """Read a headed CSV whose last column is the target.

    Classification targets that are all integers map to labels in ascending
    numeric order; any other target strings map in order of first appearance.
    """
    if task not in TASKS:
        raise DataError(f"unknown task {task!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise DataError(f"{path}: need at least one feature column and a target column")
    if not body:
        raise DataError(f"{path}: no data rows")
    ncol = len(header)
    X = np.empty((len(body), ncol - 1))
    raw_targets = []
    for i, row in enumerate(body, start=2):
        if len(row) != ncol:
            raise DataError(f"{path}: row {i} has {len(row)} columns, expected {ncol}")
        for j, cell in enumerate(row[:-1]):
            try:
                X[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {i}, column {j + 1} ({header[j]!r}): not a number: {cell!r}"
                ) from None
        raw_targets.append(row[-1].strip())
    if np.isnan(X).any():
        raise DataError(f"{path}: NaN feature values are not supported")
    if task == "regression":
        try:
            y = np.array([float(t) for t in raw_targets])
        except ValueError:
            bad = next(k for k, t in enumerate(raw_targets) if not _is_float(t))
            raise DataError(
                f"{path}: row {bad + 2}, column {ncol} ({header[-1]!r}): not a number: "
                f"{raw_targets[bad]!r}"
            ) from None
        return Dataset(X, y, task, feature_names=header[:-1], name=name or str(path))
    mapping: dict[str, int] = {}
    if all(_is_int(t) for t in raw_targets):
        # numeric labels keep their numeric order so "0"/"1" files round-trip
        for t in sorted(set(raw_targets), key=int):
            mapping[t] = len(mapping)
    labels = np.array([mapping.setdefault(t, len(mapping)) for t in raw_targets])
    k = len(mapping)
    if task == "binary" and k > 2:
        raise DataError(f"{path}: binary task but target has {k} distinct values")
    return Dataset(
        X,
        labels,
        task,
        n_classes=max(k, 2) if task == "binary" else k,
        feature_names=header[:-1],
        name=name or str(path),
        class_names=list(mapping),
    )


def _is_int(s):
    try:
        int(s)
    except ValueError:
        return False
    return True


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def write_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        target = "target" if data.task == "regression" else "class"
        w.writerow(list(data.feature_names) + [target])
        for x, t in zip(data.X, data.y):
            cells = [repr(float(v)) for v in x]
            if data.task == "regression":
                cells.append(repr(float(np.ravel(t)[0])))
            else:
                cells.append(str(int(t)))
            w.writerow(cells)


def normalize(train: Dataset, *others: Dataset) -> tuple[list[Dataset], Normalizer]:
    """Z-score features (and regression targets) with training statistics.

    Constant columns map to zero.  Returns ``[train, *others]`` normalized and
    the fitted :class:`Normalizer`.
    """
    if len(train) == 0:
        raise DataError("cannot normalize with an empty training set")
    mean = train.X.mean(axis=0)
    std = train.X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    norm = Normalizer(mean, std)
    if train.task == "regression":
        norm.y_mean = train.y.mean(axis=0)
        ys = train.y.std(axis=0)
        norm.y_std = np.where(ys > 0, ys, 1.0)
    return [norm.transform(d) for d in (train, *others)], norm


def _blocked_order(n: int, strata, rng: np.random.Generator) -> np.ndarray:
    """Seeded permutation laid out class by class, each class block shuffled.

    Taking every k-th position of this order gives a stratified sample.
    """
    if strata is None:
        return rng.permutation(n)
    blocks = []
    for c in np.unique(strata):
        members = np.flatnonzero(strata == c)
        blocks.append(rng.permutation(members))
    return np.concatenate(blocks)


def split_test_third(data: Dataset, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Index sets ``(trainval, test)`` with ``floor(N/3)`` test rows, stratified by class."""
    n = len(data)
    if n < 3:
        raise DataError("need at least 3 rows to hold out a test third")
    rng = np.random.default_rng(seed)
    order = _blocked_order(n, data.strata(), rng)
    pos = np.arange(n)
    test = np.sort(order[pos % 3 == 2])
    trainval = np.sort(order[pos % 3 != 2])
    return trainval, test


def cv_5x2(data: Dataset, seed: int, repeats: int = 5) -> FoldPlan:
    """Five seeded halvings, each used in both directions: ten (train, valid) pairs."""
    n = len(data)
    if n < 4:
        raise DataError("need at least 4 rows for 5x2 cross validation")
    rng = np.random.default_rng(seed)
    strata = data.strata()
    pairs = []
    for _ in range(repeats):
        order = _blocked_order(n, strata, rng)
        a = np.sort(order[0::2])
        b = np.sort(order[1::2])
        pairs.append((a, b))
        pairs.append((b, a))
    return FoldPlan(tuple(pairs), seed)


SYNTH_NAMES = ("xor", "two_gaussians", "ring")


def synth(name: str, n: int, seed: int) -> Dataset:
    """Seeded, balanced synthetic binary problems.

    ``xor``: unit-variance clusters at (+-2, +-2), label 1 when the cluster
    coordinates differ in sign.  ``two_gaussians``: 20-D unit Gaussians at
    means +-a with a = 2/sqrt(20).  ``ring``: 20-D N(0, 4I) against N(a, I)
    with a = 1/sqrt(20); the wide class forms a shell around the narrow one.
    """
    if name not in SYNTH_NAMES:
        raise ValueError(f"unknown synthetic dataset {name!r}; choose from {SYNTH_NAMES}")
    if n < 8:
        raise ValueError("synthetic datasets need n >= 8")
    rng = np.random.default_rng(seed)
    if name == "xor":
        centers = np.array([[2.0, 2.0], [-2.0, -2.0], [-2.0, 2.0], [2.0, -2.0]])
        labels_of = np.array([0, 0, 1, 1])
        cluster = np.arange(n) % 4
        X = centers[cluster] + rng.normal(size=(n, 2))
        y = labels_of[cluster]
    else:
        dim = 20
        y = np.arange(n) % 2
        if name == "two_gaussians":
            a = 2.0 / np.sqrt(dim)
            X = rng.normal(size=(n, dim)) + np.where(y == 0, a, -a)[:, None]
        else:
            a = 1.0 / np.sqrt(dim)
            X = np.where(
                (y == 0)[:, None],
                2.0 * rng.normal(size=(n, dim)),
                rng.normal(size=(n, dim)) + a,
            )
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], "binary", n_classes=2, name=name)
