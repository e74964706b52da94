"""
Dataset ingestion and the experimental protocol around it.

Pipeline order: load -> mapminmax to [-1, 1] over the whole table -> noise
injection -> k-fold split -> Dirichlet label-skew partition of each fold.
Normalizing before splitting leaks test-set ranges into the scaling; this is
deliberate, it mirrors the protocol the results were produced with.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .fnn import LabeledDataset


@dataclass(frozen=True)
class RawTable:
    features: np.ndarray        # (N, D) float
    labels: np.ndarray          # (N,) dense int codes
    label_names: list[str]      # code -> original label text
    header: list[str] | None = None

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def D(self) -> int:
        return self.features.shape[1]

    @property
    def C(self) -> int:
        return len(self.label_names)


@dataclass(frozen=True)
class PartitionSpec:
    alpha: float
    clients: int
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.clients < 1:
            raise ValueError("clients must be >= 1")


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path) -> RawTable:
    """Read a comma-separated table whose last column is the class label.

    A first row whose feature fields are not all numeric is taken as a header.
    Labels are coded densely in order of first appearance.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i, row) for i, row in enumerate(csv.reader(fh), start=1) if any(f.strip() for f in row)]
    if not rows:
        raise DataError(f"{path}: empty file")

    header = None
    first_line, first = rows[0]
    if not all(_is_number(f) for f in first[:-1]) or len(first) < 2:
        header = [f.strip() for f in first]
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: header but no data rows")

    width = len(header) if header is not None else len(rows[0][1])
    if width < 2:
        raise DataError(f"{path}: need at least one feature column and a label column")

    features, raw_labels = [], []
    for line, row in rows:
        if len(row) != width:
            raise DataError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        try:
            features.append([float(f) for f in row[:-1]])
        except ValueError:
            raise DataError(f"{path}: line {line} has a non-numeric feature value") from None
        raw_labels.append(row[-1].strip())

    X = np.array(features, dtype=float)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite feature values")
    names: dict[str, int] = {}
    codes = np.array([names.setdefault(lab, len(names)) for lab in raw_labels], dtype=np.int64)
    return RawTable(X, codes, list(names), header)


def mapminmax(X: np.ndarray) -> np.ndarray:
    """Scale each column linearly onto [-1, 1]; constant columns become 0."""
    X = np.asarray(X, dtype=float)
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    out = np.zeros_like(X)
    ok = span > 0
    out[:, ok] = 2.0 * (X[:, ok] - lo[ok]) / span[ok] - 1.0
    return out


def normalize_mapminmax(table: RawTable | LabeledDataset) -> LabeledDataset:
    if isinstance(table, LabeledDataset):
        return LabeledDataset(mapminmax(table.X), table.y, table.n_classes)
    if table.N < 1:
        raise DataError("cannot normalize an empty table")
    return LabeledDataset(mapminmax(table.features), table.labels, table.C)


def dirichlet_proportions(n_classes: int, spec: PartitionSpec) -> np.ndarray:
    """(C, Q) matrix; row c is a Dir(alpha) draw splitting class c over clients."""
    rng = np.random.default_rng([spec.seed, 0])
    props = rng.dirichlet(np.full(spec.clients, spec.alpha), size=n_classes)
    return props


def largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    """Integer allocation of ``total`` following ``proportions`` exactly in sum."""
    quotas = total * np.asarray(proportions, dtype=float)
    counts = np.floor(quotas).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def partition_indices(labels: np.ndarray, proportions: np.ndarray, seed) -> list[np.ndarray]:
    """Split sample indices over clients class by class.

    Empty clients are repaired by moving one sample from the largest client.
    """
    labels = np.asarray(labels)
    n_classes, Q = proportions.shape
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(Q)]
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        counts = largest_remainder(idx.size, proportions[c])
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for q in range(Q):
            buckets[q].extend(idx[bounds[q]:bounds[q + 1]].tolist())

    if len(labels) >= Q:
        for q in range(Q):
            if not buckets[q]:
                donor = max(range(Q), key=lambda j: len(buckets[j]))
                buckets[q].append(buckets[donor].pop())
    return [np.sort(np.array(b, dtype=np.int64)) for b in buckets]


def dirichlet_partition(dataset: LabeledDataset, spec: PartitionSpec) -> list[LabeledDataset]:
    if len(dataset) < spec.clients:
        raise DataError(f"cannot give {spec.clients} clients a sample each from {len(dataset)} samples")
    props = dirichlet_proportions(dataset.n_classes, spec)
    parts = partition_indices(dataset.y, props, [spec.seed, 1])
    return [dataset.subset(p) for p in parts]


def inject_noise(dataset: LabeledDataset, level: float, seed, mode: str = "samples") -> LabeledDataset:
    """Add standard normal noise to a random fraction of the data.

    ``mode="samples"`` perturbs every feature of floor(level * N) samples;
    ``mode="features"`` perturbs floor(level * N * D) individual entries.
    Labels are never changed.
    """
    if not 0.0 <= level <= 1.0:
        raise ValueError("noise level must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    X = np.array(dataset.X)
    N, D = X.shape
    if mode == "samples":
        rows = rng.choice(N, size=int(np.floor(level * N)), replace=False)
        X[rows] += rng.standard_normal((rows.size, D))
    elif mode == "features":
        cells = rng.choice(N * D, size=int(np.floor(level * N * D)), replace=False)
        X.flat[cells] += rng.standard_normal(cells.size)
    else:
        raise ValueError(f"unknown noise mode {mode!r}")
    return LabeledDataset(X, dataset.y, dataset.n_classes)


def kfold_indices(n: int, folds: int, seed) -> list[np.ndarray]:
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise DataError(f"{n} samples cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def kfold_split(dataset: LabeledDataset, folds: int, seed) -> list[tuple[LabeledDataset, LabeledDataset]]:
    out = []
    test_folds = kfold_indices(dataset.N, folds, seed)
    for test_idx in test_folds:
        mask = np.ones(dataset.N, dtype=bool)
        mask[test_idx] = False
        out.append((dataset.subset(np.flatnonzero(mask)), dataset.subset(np.sort(test_idx))))
    return out


def make_blobs(n_samples: int, n_features: int, n_classes: int, spread: float, seed,
               center_box: float = 1.0) -> LabeledDataset:
    """Isotropic Gaussian class blobs with centers uniform in [-box, box]^D."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-center_box, center_box, (n_classes, n_features))
    y = np.arange(n_samples) % n_classes
    y = rng.permutation(y)
    X = centers[y] + spread * rng.standard_normal((n_samples, n_features))
    return LabeledDataset(X, y, n_classes)
