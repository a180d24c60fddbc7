"""K-means pseudo-labelling with elbow and silhouette model selection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .hsi_core import ClassLabel
from .preprocess import FeatureMatrix

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 300
DEFAULT_N_INIT = 10


@dataclass(frozen=True, eq=False)
class KMeansModel:
    k: int
    centroids: np.ndarray
    inertia: float
    iterations: int
    seed: int
    # inertia after each assignment step; non-increasing
    inertia_history: tuple = ()


@dataclass(frozen=True, eq=False)
class PseudoLabels:
    assignments: np.ndarray
    k: int
    class_map: Optional[dict] = None

    def __post_init__(self) -> None:
        a = np.array(self.assignments, dtype=np.int64, copy=True)
        if a.ndim != 1:
            raise ValueError("assignments must be 1-D")
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise ValueError(f"assignments must lie in [0, {self.k})")
        a.setflags(write=False)
        object.__setattr__(self, "assignments", a)
        if self.class_map is not None:
            names = list(self.class_map.values())
            if len(set(names)) != len(names):
                raise ValueError("class_map must be injective")

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    def as_classes(self) -> list:
        if self.class_map is None:
            raise ValueError("no class map; call map_clusters_to_classes first")
        return [self.class_map[int(a)] for a in self.assignments]


@dataclass(frozen=True, eq=False)
class KScanResult:
    k_values: tuple
    inertias: tuple
    # NaN where no silhouette was computed (k below the scanned range)
    silhouettes: tuple
    chosen_k: int
    elbow_k: int
    agreement: bool
    seed: int = 0
    models: dict = field(default_factory=dict, repr=False)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return cdist(x, c, "sqeuclidean")


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[centers[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a center
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(idx)
        d2 = np.minimum(d2, _sq_dists(x, x[idx][None, :])[:, 0])
    return x[centers].copy()


def _lloyd(x, k, rng, max_iter, tol):
    centroids = _kmeanspp(x, k, rng)
    history = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        d2 = _sq_dists(x, centroids)
        labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(x.shape[0]), labels]
        history.append(float(point_d2.sum()))

        new = centroids.copy()
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = x[labels == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            far = int(point_d2.argmax())
            new[j] = x[far]
            point_d2[far] = 0.0
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    d2 = _sq_dists(x, centroids)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(x.shape[0]), labels].sum())
    history.append(inertia)
    return centroids, labels, inertia, iterations, tuple(history)


def kmeans_fit(features: FeatureMatrix, k: int, seed: int = 0,
               max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
               n_init: int = DEFAULT_N_INIT):
    """Lloyd's algorithm from seeded k-means++ starts.

    ``n_init`` starts are drawn in sequence from one generator seeded with
    ``seed``; the run with the lowest final inertia wins (earliest on ties).
    Rows are visited in sample-id order, so permuting the input rows (with
    their ids) yields the same partition.  Ties in assignment go to the lowest
    centroid index; an empty cluster is re-seeded with the point farthest from
    its centroid.
    """
    x = features.values
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples ({n})")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol < 0:
        raise ValueError("tol must be non-negative")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")

    order = np.argsort(np.asarray(features.sample_ids, dtype=object), kind="stable")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(x[order], k, rng, max_iter, tol)
        if best is None or run[2] < best[2]:
            best = run
    centroids, labels_sorted, inertia, iterations, history = best
    labels = np.empty(n, dtype=np.int64)
    labels[order] = labels_sorted
    model = KMeansModel(k, centroids, inertia, iterations, seed, history)
    return model, PseudoLabels(labels, k)


def silhouette_score(features: FeatureMatrix, labels: PseudoLabels) -> float:
    """Mean silhouette with Euclidean distance; members of singleton clusters score 0."""
    x = features.values
    a_idx = labels.assignments
    n = x.shape[0]
    if labels.k < 2:
        raise ValueError("silhouette needs k >= 2")
    if n < 2 or a_idx.size != n:
        raise ValueError("silhouette needs >= 2 rows matching the labels")
    counts = labels.counts()
    if np.any(counts == 0):
        raise ValueError(f"empty cluster(s): {np.flatnonzero(counts == 0).tolist()}")

    d = cdist(x, x)
    onehot = np.zeros((n, labels.k))
    onehot[np.arange(n), a_idx] = 1.0
    sums = d @ onehot  # (n, k): summed distance to each cluster
    own = counts[a_idx]
    a = sums[np.arange(n), a_idx] / np.maximum(own - 1, 1)
    mean_other = sums / counts
    mean_other[np.arange(n), a_idx] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return float(s.mean())


def elbow_knee(k_values: Sequence[int], inertias: Sequence[float]) -> int:
    """Interior k with the largest discrete second difference of inertia (ties -> smaller k)."""
    if len(k_values) < 3:
        raise ValueError("elbow detection needs at least 3 candidate k values")
    if len(inertias) != len(k_values):
        raise ValueError("k_values and inertias differ in length")
    y = np.asarray(inertias, dtype=np.float64)
    second = y[:-2] - 2.0 * y[1:-1] + y[2:]
    return int(k_values[1 + int(np.argmax(second))])


def select_k(features: FeatureMatrix, k_min: int = 2, k_max: int = 8, seed: int = 0,
             max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
             n_init: int = DEFAULT_N_INIT) -> KScanResult:
    """Scan ``k_min - 1 .. k_max`` clusters; pick K by silhouette, cross-check with the elbow.

    Each k is fitted with seed ``seed + k``.
    """
    if not (2 <= k_min < k_max <= features.rows):
        raise ValueError(
            f"need 2 <= k_min < k_max <= rows, got k_min={k_min}, k_max={k_max}, rows={features.rows}")
    ks = list(range(k_min - 1, k_max + 1))
    inertias, sils, models = [], [], {}
    for k in ks:
        model, labels = kmeans_fit(features, k, seed + k, max_iter, tol, n_init)
        models[k] = (model, labels)
        inertias.append(model.inertia)
        if k >= k_min and np.all(labels.counts() > 0):
            sils.append(silhouette_score(features, labels))
        else:
            sils.append(float("nan"))
    scored = np.array(sils[1:])
    chosen = ks[1 + int(np.nanargmax(scored))]
    elbow = elbow_knee(ks, inertias)
    return KScanResult(tuple(ks), tuple(inertias), tuple(sils), chosen, elbow,
                       elbow == chosen, seed, models)


def map_clusters_to_classes(labels: PseudoLabels, features: FeatureMatrix,
                            reference_band: int) -> PseudoLabels:
    """Name the two clusters: higher mean reflectance at ``reference_band`` is Mild.

    Equal reflectance gives Mild to the lower cluster index.
    """
    if labels.k != 2:
        raise ValueError(f"class mapping needs exactly 2 clusters, got {labels.k}")
    if not 0 <= reference_band < features.cols:
        raise IndexError(f"reference band {reference_band} out of range")
    col = features.values[:, reference_band]
    means = [col[labels.assignments == j].mean() if np.any(labels.assignments == j) else -np.inf
             for j in (0, 1)]
    mild = 1 if means[1] > means[0] else 0
    class_map = {mild: ClassLabel.MILD, 1 - mild: ClassLabel.SERIOUS}
    return PseudoLabels(labels.assignments, 2, dict(sorted(class_map.items())))


def save_kscan_csv(result: KScanResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "inertia", "silhouette"])
        for k, inertia, sil in zip(result.k_values, result.inertias, result.silhouettes):
            w.writerow([k, repr(float(inertia)), "" if np.isnan(sil) else repr(float(sil))])


def load_kscan_csv(path) -> list[tuple]:
    """Rows of ``(k, inertia, silhouette)``; silhouette is NaN where blank."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["k", "inertia", "silhouette"]:
            raise ValueError(f"{path}: not a K-scan CSV")
        return [(int(k), float(i), float(s) if s else float("nan")) for k, i, s in reader]


class KMeansPseudoLabeler(ClusterMixin, BaseEstimator):
    """Self-supervised labeller: chooses K by silhouette unless ``n_clusters`` is fixed.

    Parameters
    ----------
    n_clusters : int or None
        Fixed cluster count; None scans ``k_min..k_max``.
    k_min, k_max : int
        Scan range for automatic selection.
    seed : int
    max_iter : int
    tol : float

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
    cluster_centers_ : ndarray of shape (n_clusters_, n_features)
    n_clusters_ : int
    scan_ : KScanResult or None
    """

    def __init__(self, n_clusters=None, k_min=2, k_max=8, seed=0,
                 max_iter=DEFAULT_MAX_ITER, tol=DEFAULT_TOL):
        self.n_clusters = n_clusters
        self.k_min = k_min
        self.k_max = k_max
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        feats = FeatureMatrix.from_array(X)
        self.scan_ = None
        if self.n_clusters is None:
            self.scan_ = select_k(feats, self.k_min, min(self.k_max, feats.rows), self.seed,
                                  self.max_iter, self.tol)
            model, labels = self.scan_.models[self.scan_.chosen_k]
        else:
            model, labels = kmeans_fit(feats, self.n_clusters, self.seed, self.max_iter, self.tol)
        self.model_ = model
        self.pseudo_labels_ = labels
        self.labels_ = np.asarray(labels.assignments)
        self.cluster_centers_ = model.centroids
        self.n_clusters_ = model.k
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=np.float64)
        return _sq_dists(X, self.cluster_centers_).argmin(axis=1)
