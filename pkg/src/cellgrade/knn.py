"""Exact k-nearest-neighbour classification over feature vectors.

Four distance metrics (euclidean, manhattan, hamming, minkowski), exact
neighbour search (no approximate indexing: at 512-3072 dims a spatial index
buys nothing), deterministic majority vote, and stratified k-fold
cross-validation. Neighbour order is always (distance, train_index)
lexicographic so results are reproducible across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import stratified_fold_indices, fold_assignment_hash
from .errors import ConfigError, ShapeError

_VARIANTS = ("euclidean", "manhattan", "hamming", "minkowski")

# Memory cap for broadcast |Q - X| intermediates, in float64 elements.
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class DistanceMetric:
    """Metric variant plus the Minkowski exponent where applicable."""

    variant: str
    p: float | None = None

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ConfigError(f"unknown metric {self.variant!r}, expected one of {_VARIANTS}")
        if self.variant == "minkowski":
            if self.p is None:
                raise ConfigError("minkowski metric needs an exponent p")
            if self.p < 1.0:
                raise ConfigError(f"minkowski p={self.p} rejected: p >= 1 required for a true metric")
        elif self.p is not None:
            raise ConfigError(f"{self.variant} metric takes no exponent (got p={self.p})")

    @property
    def label(self) -> str:
        return f"minkowski(p={self.p:g})" if self.variant == "minkowski" else self.variant


EUCLIDEAN = DistanceMetric("euclidean")
MANHATTAN = DistanceMetric("manhattan")
HAMMING = DistanceMetric("hamming")


def minkowski(p: float) -> DistanceMetric:
    return DistanceMetric("minkowski", p)


def distance(metric: DistanceMetric, a: np.ndarray, b: np.ndarray) -> float:
    """Distance between two equal-length vectors.

    euclidean: sqrt(sum((a-b)^2)); manhattan: sum(|a-b|); hamming: count of
    exactly unequal positions (meant for binary features, no thresholding);
    minkowski(p): (sum(|a-b|^p))^(1/p).
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size or a.size == 0:
        raise ShapeError(f"distance needs equal non-empty dims, got {a.size} and {b.size}")
    if metric.variant == "euclidean":
        return float(np.sqrt(np.sum((a - b) ** 2)))
    if metric.variant == "manhattan":
        return float(np.sum(np.abs(a - b)))
    if metric.variant == "hamming":
        return float(np.count_nonzero(a != b))
    return float(np.sum(np.abs(a - b) ** metric.p) ** (1.0 / metric.p))


@dataclass(frozen=True)
class KnnModel:
    """The training data is the model: N x D features, N binary labels."""

    features: np.ndarray
    labels: np.ndarray
    k: int
    metric: DistanceMetric = EUCLIDEAN

    def __post_init__(self):
        x = self.features
        if x.ndim != 2 or x.shape[0] < 1:
            raise ShapeError(f"features must be a non-empty N x D matrix, got shape {x.shape}")
        if self.labels.shape != (x.shape[0],):
            raise ShapeError(f"labels shape {self.labels.shape} does not match N={x.shape[0]}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.k > x.shape[0]:
            raise ConfigError(f"k={self.k} exceeds training-set size N={x.shape[0]}")


@dataclass(frozen=True)
class NeighborSet:
    """k nearest training entries sorted ascending by (distance, train_index)."""

    indices: np.ndarray
    distances: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.indices.size

    @property
    def entries(self) -> list[tuple[int, float, int]]:
        return [(int(i), float(d), int(l))
                for i, d, l in zip(self.indices, self.distances, self.labels)]


def _row_distances(metric: DistanceMetric, x: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = x - q[None, :]
    if metric.variant == "euclidean":
        return np.sqrt(np.sum(diff * diff, axis=1))
    if metric.variant == "manhattan":
        return np.sum(np.abs(diff), axis=1)
    if metric.variant == "hamming":
        return np.count_nonzero(x != q[None, :], axis=1).astype(np.float64)
    return np.sum(np.abs(diff) ** metric.p, axis=1) ** (1.0 / metric.p)


def k_nearest(model: KnnModel, query) -> NeighborSet:
    """Exact k smallest (distance, train_index) pairs for one query vector."""
    q = np.asarray(getattr(query, "values", query), dtype=np.float64).reshape(-1)
    x = model.features
    if q.size != x.shape[1]:
        raise ShapeError(f"query has {q.size} dims, model rows have {x.shape[1]}")
    dists = _row_distances(model.metric, np.asarray(x, dtype=np.float64), q)
    order = np.argsort(dists, kind="stable")[: model.k]
    return NeighborSet(order, dists[order], np.asarray(model.labels)[order])


def predict(neighbors: NeighborSet) -> int:
    """Modal label; ties go to the nearest neighbour among the tied classes."""
    if len(neighbors) == 0:
        raise ConfigError("cannot predict from an empty neighbour set")
    labels, counts = np.unique(neighbors.labels, return_counts=True)
    tied = set(labels[counts == counts.max()].tolist())
    if len(tied) == 1:
        return int(tied.pop())
    for lab in neighbors.labels:  # entries are already distance-sorted
        if int(lab) in tied:
            return int(lab)
    raise AssertionError("unreachable: tied classes must appear among neighbours")


def class_probabilities(neighbors: NeighborSet) -> dict[int, float]:
    """P(c) = count(c) / k for the two classes."""
    if len(neighbors) == 0:
        raise ConfigError("cannot compute probabilities of an empty neighbour set")
    k = len(neighbors)
    count1 = int(np.sum(neighbors.labels == 1))
    return {0: (k - count1) / k, 1: count1 / k}


def _pairwise_distances(metric: DistanceMetric, queries: np.ndarray, x: np.ndarray) -> np.ndarray:
    """All query-to-train distances, (M, N). Euclidean goes through a GEMM."""
    queries = np.asarray(queries, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if metric.variant == "euclidean":
        qq = np.sum(queries * queries, axis=1)[:, None]
        xx = np.sum(x * x, axis=1)[None, :]
        d2 = np.maximum(qq + xx - 2.0 * (queries @ x.T), 0.0)
        return np.sqrt(d2)
    out = np.empty((queries.shape[0], x.shape[0]))
    step = max(1, _CHUNK_ELEMENTS // (x.shape[0] * max(1, x.shape[1])))
    for lo in range(0, queries.shape[0], step):
        chunk = queries[lo : lo + step, None, :]
        if metric.variant == "manhattan":
            out[lo : lo + step] = np.sum(np.abs(chunk - x[None, :, :]), axis=2)
        elif metric.variant == "hamming":
            out[lo : lo + step] = np.count_nonzero(chunk != x[None, :, :], axis=2)
        else:
            out[lo : lo + step] = np.sum(np.abs(chunk - x[None, :, :]) ** metric.p, axis=2) ** (1.0 / metric.p)
    return out


def _vote(sorted_labels: np.ndarray, k: int) -> np.ndarray:
    """Row-wise majority over the first k distance-sorted labels (binary)."""
    ones = np.sum(sorted_labels[:, :k], axis=1)
    zeros = k - ones
    return np.where(ones > zeros, 1, np.where(zeros > ones, 0, sorted_labels[:, 0]))


@dataclass(frozen=True)
class CvReport:
    """Per-fold held-out accuracies for one (k, metric) configuration."""

    k: int
    metric: DistanceMetric
    folds: int
    seed: int
    accuracies: tuple[float, ...]
    fold_hash: str
    mean: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "mean", float(np.mean(self.accuracies)))


def _fold_sorted_labels(features, labels, assignment, folds, metric, max_k):
    """Per fold: validation-row neighbour labels sorted by (distance, index).

    Validation queries go through in chunks so the distance matrix and its
    argsort stay bounded regardless of corpus size.
    """
    per_fold = []
    for f in range(folds):
        val = np.flatnonzero(assignment == f)
        train = np.flatnonzero(assignment != f)
        if train.size < max_k:
            raise ConfigError(
                f"fold {f} leaves only {train.size} training samples, fewer than k={max_k}"
            )
        x_train = features[train]
        step = max(1, _CHUNK_ELEMENTS // max(1, train.size))
        neighbour_labels = np.empty((val.size, max_k), dtype=labels.dtype)
        for lo in range(0, val.size, step):
            dists = _pairwise_distances(metric, features[val[lo : lo + step]], x_train)
            order = np.argsort(dists, axis=1, kind="stable")[:, :max_k]
            neighbour_labels[lo : lo + step] = labels[train][order]
        per_fold.append((neighbour_labels, labels[val]))
    return per_fold


def cross_validate(features: np.ndarray, labels: np.ndarray, k: int, folds: int,
                   metric: DistanceMetric = EUCLIDEAN, seed: int = 0) -> CvReport:
    """Stratified k-fold CV: train on folds-1 parts, score the held-out part."""
    report, = k_sweep(features, labels, [k], folds, metric, seed)
    return report


def k_sweep(features: np.ndarray, labels: np.ndarray, k_values, folds: int,
            metric: DistanceMetric = EUCLIDEAN, seed: int = 0) -> list[CvReport]:
    """One cross_validate per k, all sharing a single fold assignment.

    Neighbour lists are computed once up to max(k_values), so sweep curves
    are directly comparable and cheap.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    k_values = [int(k) for k in k_values]
    if not k_values or min(k_values) < 1:
        raise ConfigError(f"k_values must be non-empty positive integers, got {k_values}")
    if folds < 2:
        raise ConfigError(f"folds must be >= 2, got {folds}")
    assignment = stratified_fold_indices(labels, folds, seed)
    fold_hash = fold_assignment_hash(assignment, folds, seed)
    per_fold = _fold_sorted_labels(features, labels, assignment, folds, metric, max(k_values))
    reports = []
    for k in k_values:
        accs = tuple(
            float(np.mean(_vote(sorted_labels, k) == truth))
            for sorted_labels, truth in per_fold
        )
        reports.append(CvReport(k, metric, folds, seed, accs, fold_hash))
    return reports
