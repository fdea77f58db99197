"""Shared data model: datasets, subgroup partitions, operating points, splits."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

GroupKey = tuple


class SplitWarning(UserWarning):
    """A stratification cell was too small and a fallback rule was used."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, binary labels and per-example sensitive tuples.

    Arrays are copied and frozen on construction; use :meth:`subset` to
    derive new datasets.
    """

    features: np.ndarray
    labels: np.ndarray
    sensitive: tuple
    feature_names: tuple = ()
    sensitive_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ValueError("features must be a 2-d matrix")
        y = np.asarray(self.labels)
        n = X.shape[0]
        if n == 0:
            raise ValueError("dataset must contain at least one example")
        if y.shape != (n,):
            raise ValueError(f"labels has shape {y.shape}, expected ({n},)")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must contain only 0 or 1")
        sens = tuple(tuple(s) for s in self.sensitive)
        if len(sens) != n:
            raise ValueError(f"sensitive has {len(sens)} rows, expected {n}")
        fnames = tuple(self.feature_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        if len(fnames) != X.shape[1]:
            raise ValueError("feature_names length does not match feature columns")
        snames = tuple(self.sensitive_names) or tuple(f"s{i}" for i in range(len(sens[0])))
        for s in sens:
            if len(s) != len(snames):
                raise ValueError(
                    f"sensitive tuple {s!r} has arity {len(s)}, expected {len(snames)}")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y.astype(np.int64)))
        object.__setattr__(self, "sensitive", sens)
        object.__setattr__(self, "feature_names", fnames)
        object.__setattr__(self, "sensitive_names", snames)

    @property
    def n_examples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx],
                       tuple(self.sensitive[i] for i in idx),
                       self.feature_names, self.sensitive_names)

    def permuted(self, perm) -> "Dataset":
        return self.subset(perm)


@dataclass(frozen=True, eq=False)
class GroupPartition:
    """Disjoint cover of a dataset's rows by sensitive tuple.

    ``keys`` is the lexicographic group order used everywhere downstream;
    ``group_ids[i]`` is the position of row ``i``'s group in ``keys``.
    """

    keys: tuple
    groups: Mapping[Any, np.ndarray]
    prevalence: Mapping[Any, float]
    group_ids: np.ndarray
    n_examples: int

    @property
    def n_groups(self) -> int:
        return len(self.keys)

    def sizes(self) -> np.ndarray:
        return np.array([len(self.groups[k]) for k in self.keys], dtype=np.int64)

    def prevalence_vector(self) -> np.ndarray:
        return np.array([self.prevalence[k] for k in self.keys], dtype=np.float64)

    def index_of(self, key) -> int:
        return self.keys.index(tuple(key))


def _sort_keys(keys):
    # mixed int/str columns are not expected, but keep ordering total anyway
    try:
        return sorted(keys)
    except TypeError:
        return sorted(keys, key=lambda k: tuple((type(v).__name__, v) for v in k))


def partition_from_keys(sensitive: Sequence[tuple], keys: Sequence[tuple] | None = None
                        ) -> GroupPartition:
    """Build a partition from per-row sensitive tuples.

    ``keys`` may fix the group order (and include groups absent from the
    rows, which then get empty index lists); by default the distinct
    tuples are sorted lexicographically.
    """
    rows = [tuple(s) for s in sensitive]
    n = len(rows)
    if n == 0:
        raise ValueError("cannot partition an empty dataset")
    if keys is None:
        keys = _sort_keys(set(rows))
    keys = tuple(tuple(k) for k in keys)
    pos = {k: i for i, k in enumerate(keys)}
    try:
        ids = np.fromiter((pos[r] for r in rows), dtype=np.int64, count=n)
    except KeyError as exc:
        raise ValueError(f"row group {exc.args[0]!r} not among the given keys") from None
    order = np.argsort(ids, kind="stable")
    counts = np.bincount(ids, minlength=len(keys))
    bounds = np.concatenate([[0], np.cumsum(counts)])
    groups = {}
    for i, k in enumerate(keys):
        members = order[bounds[i]:bounds[i + 1]]
        members.setflags(write=False)
        groups[k] = members
    prevalence = {k: counts[i] / n for i, k in enumerate(keys)}
    ids.setflags(write=False)
    return GroupPartition(keys, groups, prevalence, ids, n)


def partition_by_groups(dataset: Dataset) -> GroupPartition:
    """One group per distinct sensitive tuple present in ``dataset``."""
    return partition_from_keys(dataset.sensitive)


@dataclass(frozen=True)
class OperatingPoint:
    """Per-group performance vector plus overall performance."""

    per_group: Mapping[Any, float]
    overall: float
    threshold: float | None = None

    def __post_init__(self):
        for k, v in self.per_group.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"performance for group {k!r} is {v}, outside [0, 1]")
        if not 0.0 <= self.overall <= 1.0:
            raise ValueError(f"overall performance {self.overall} outside [0, 1]")

    def vector(self, keys=None) -> np.ndarray:
        keys = self.per_group.keys() if keys is None else keys
        return np.array([self.per_group[k] for k in keys], dtype=np.float64)


def _apportion(sizes: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder allocation of ``total`` proportional to ``sizes``."""
    n = sizes.sum()
    exact = sizes * (total / n)
    base = np.floor(exact).astype(np.int64)
    base = np.minimum(base, sizes)
    short = total - base.sum()
    if short > 0:
        rem = exact - base
        rem[base >= sizes] = -1.0
        # stable: ties go to the earlier cell
        order = np.argsort(-rem, kind="stable")
        for i in order[:short]:
            base[i] += 1
    return base


def stratified_split_indices(sensitive: Sequence[tuple], labels, test_fraction: float,
                             seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic split stratified jointly on (group, label).

    Cells with fewer than two examples fall back to stratifying their
    group on group alone; groups with a single example go to train.
    Each fallback emits a :class:`SplitWarning`.  The number of test
    examples is ``round(test_fraction * n)`` apportioned over cells by
    largest remainder, so cell shares are within one example of exact.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    labels = np.asarray(labels)
    part = partition_from_keys(sensitive)
    rng = np.random.Generator(np.random.Philox(seed))

    cells = []  # (indices) per stratification cell, fixed order
    forced_train = []
    for key in part.keys:
        members = part.groups[key]
        if len(members) < 2:
            warnings.warn(f"group {key!r} has {len(members)} example(s); assigned to train",
                          SplitWarning, stacklevel=2)
            forced_train.append(members)
            continue
        by_label = [members[labels[members] == v] for v in (0, 1)]
        if any(0 < len(c) < 2 for c in by_label):
            warnings.warn(f"group {key!r} has a (group, label) cell with fewer than 2 "
                          "examples; stratifying on group only", SplitWarning, stacklevel=2)
            cells.append(members)
        else:
            cells.extend(c for c in by_label if len(c))

    n_split = sum(len(c) for c in cells)
    n_test = int(math.floor(test_fraction * n_split + 0.5))
    n_test = min(max(n_test, 0), n_split)
    sizes = np.array([len(c) for c in cells], dtype=np.int64)
    quota = _apportion(sizes, n_test) if n_split else sizes * 0

    train_parts, test_parts = list(forced_train), []
    for c, q in zip(cells, quota):
        perm = c[rng.permutation(len(c))]
        test_parts.append(perm[:q])
        train_parts.append(perm[q:])
    train = np.sort(np.concatenate(train_parts)) if train_parts else np.empty(0, np.int64)
    test = np.sort(np.concatenate(test_parts)) if test_parts else np.empty(0, np.int64)
    return train.astype(np.int64), test.astype(np.int64)


def stratified_split(dataset: Dataset, test_fraction: float, seed: int
                     ) -> tuple[Dataset, Dataset]:
    train, test = stratified_split_indices(dataset.sensitive, dataset.labels,
                                           test_fraction, seed)
    if len(test) == 0 or len(train) == 0:
        raise ValueError("split produced an empty side; adjust test_fraction")
    return dataset.subset(train), dataset.subset(test)
