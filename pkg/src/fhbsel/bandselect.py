"""Band importance mining against pseudo-labels and top-k band selection.

Three interchangeable scorers are provided (tree impurity, ANOVA F, mutual
information).  Rankings always break score ties toward the lower band index.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._trees import grow_gini_tree
from .classify import CLASSIFIERS, encode_labels, evaluate, predict, train_named
from .cluster import KMeansPseudoLabeler, PseudoLabels
from .hsi_core import Spectrum, nearest_band
from .preprocess import FeatureMatrix

F_SENTINEL = 1e12
_ZERO_REL = 1e-24
DEGENERATE_DENOM = 1e-12


class ImportanceMethod(str, enum.Enum):
    IMPURITY = "impurity"
    FSTAT = "fstat"
    MUTUALINFO = "mutualinfo"


@dataclass(frozen=True, eq=False)
class ImportanceReport:
    scores: np.ndarray
    method: ImportanceMethod
    ranking: np.ndarray
    wavelengths_nm: Optional[np.ndarray] = None

    @classmethod
    def from_scores(cls, scores, method, wavelengths_nm=None) -> "ImportanceReport":
        scores = np.asarray(scores, dtype=np.float64)
        if not np.all(np.isfinite(scores)) or np.any(scores < 0):
            raise ValueError("importance scores must be finite and non-negative")
        ranking = np.argsort(-scores, kind="stable")
        for a in (scores, ranking):
            a.setflags(write=False)
        return cls(scores, ImportanceMethod(method), ranking, wavelengths_nm)

    @property
    def bands(self) -> int:
        return self.scores.size


@dataclass(frozen=True, eq=False)
class SweepResult:
    k_values: tuple
    accuracies: tuple
    classifier: str
    seed: int


class WindowFractions(NamedTuple):
    inside: tuple       # one fraction per requested window
    outside: float

    @property
    def combined(self) -> float:
        return float(sum(self.inside))


def _label_array(labels) -> tuple[np.ndarray, int]:
    if isinstance(labels, PseudoLabels):
        return np.asarray(labels.assignments), labels.k
    y = np.asarray(labels)
    if y.dtype.kind not in "iu":
        y = encode_labels(labels)
    return y.astype(np.int64), int(y.max()) + 1


def _check_rows(features: FeatureMatrix, y: np.ndarray) -> None:
    if features.rows != y.size:
        raise ValueError(f"{features.rows} rows but {y.size} labels")


def importance_fstat(features: FeatureMatrix, labels) -> ImportanceReport:
    """One-way ANOVA F statistic of each band across clusters.

    A band with no within-cluster spread scores 0 when the cluster means also
    agree, and ``F_SENTINEL`` otherwise.
    """
    y, k = _label_array(labels)
    x = features.values
    _check_rows(features, y)
    counts = np.bincount(y, minlength=k)
    if k < 2:
        raise ValueError("F statistic needs at least 2 clusters")
    if np.any(counts < 2):
        raise ValueError(f"every cluster needs >= 2 samples, got counts {counts.tolist()}")
    n = x.shape[0]
    onehot = np.eye(k)[y]
    means = (onehot.T @ x) / counts[:, None]
    grand = x.mean(axis=0)
    ssb = (counts[:, None] * (means - grand) ** 2).sum(axis=0)
    ssw = ((x - means[y]) ** 2).sum(axis=0)
    tiny = _ZERO_REL * n * np.maximum(np.abs(x).max(axis=0) ** 2, np.finfo(float).tiny)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (ssb / (k - 1)) / (ssw / (n - k))
    flat = ssw <= tiny
    f[flat] = np.where(ssb[flat] <= tiny[flat], 0.0, F_SENTINEL)
    return ImportanceReport.from_scores(f, ImportanceMethod.FSTAT, features.wavelengths_nm)


def equal_width_bins(col: np.ndarray, bins: int) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if not hi > lo:
        return np.zeros(col.size, dtype=np.int64)
    idx = np.floor((col - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def importance_mutualinfo(features: FeatureMatrix, labels, bins: int = 16) -> ImportanceReport:
    """Mutual information (nats) between each band's equal-width histogram bin and the cluster."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    y, k = _label_array(labels)
    x = features.values
    _check_rows(features, y)
    n = x.shape[0]
    py = np.bincount(y, minlength=k) / n
    scores = np.empty(x.shape[1])
    for b in range(x.shape[1]):
        joint = np.bincount(equal_width_bins(x[:, b], bins) * k + y, minlength=bins * k)
        pxy = joint.reshape(bins, k) / n
        px = pxy.sum(axis=1, keepdims=True)
        nz = pxy > 0
        mi = (pxy[nz] * np.log(pxy[nz] / (px * py[None, :])[nz])).sum()
        scores[b] = max(mi, 0.0)
    return ImportanceReport.from_scores(scores, ImportanceMethod.MUTUALINFO, features.wavelengths_nm)


def _resolve_max_features(max_features, n_features: int) -> int:
    if max_features is None:
        return n_features
    if max_features == "sqrt":
        return max(1, int(np.sqrt(n_features)))
    if isinstance(max_features, float):
        return max(1, int(max_features * n_features))
    return max(1, min(int(max_features), n_features))


def importance_impurity(features: FeatureMatrix, labels, trees: int = 100, max_depth: int = 3,
                        seed: int = 0, max_features="sqrt") -> ImportanceReport:
    """Total Gini decrease per band over a bagged ensemble of shallow trees.

    Each tree sees a bootstrap sample and, at every node, a random subset of
    ``max_features`` bands.  Scores are normalized to sum to 1 unless no split
    happened at all.
    """
    y, k = _label_array(labels)
    _check_rows(features, y)
    if trees < 1 or max_depth < 1:
        raise ValueError("trees and max_depth must be >= 1")
    if np.unique(y).size < 2:
        raise ValueError("impurity importance needs at least two populated clusters")
    x = features.values
    n, p = x.shape
    m = _resolve_max_features(max_features, p)
    rng = np.random.default_rng(seed)
    raw = np.zeros(p)
    for _ in range(trees):
        boot = rng.integers(0, n, size=n)
        grow_gini_tree(x, y, k, max_depth, rng, boot, m, raw)
    total = raw.sum()
    scores = raw / total if total > 0 else raw
    return ImportanceReport.from_scores(scores, ImportanceMethod.IMPURITY, features.wavelengths_nm)


def compute_importance(method, features: FeatureMatrix, labels, seed: int = 0,
                       trees: int = 100, max_depth: int = 3, bins: int = 16) -> ImportanceReport:
    method = ImportanceMethod(method)
    if method is ImportanceMethod.IMPURITY:
        return importance_impurity(features, labels, trees, max_depth, seed)
    if method is ImportanceMethod.FSTAT:
        return importance_fstat(features, labels)
    return importance_mutualinfo(features, labels, bins)


def top_k_bands(report: ImportanceReport, k: int) -> list[int]:
    if not 1 <= k <= report.bands:
        raise ValueError(f"k must be in [1, {report.bands}], got {k}")
    return [int(b) for b in report.ranking[:k]]


def restrict_features(features: FeatureMatrix, bands: Sequence[int]) -> FeatureMatrix:
    """Column subset in the given order."""
    idx = [int(b) for b in bands]
    if len(set(idx)) != len(idx):
        raise ValueError("duplicate band index")
    bad = [b for b in idx if not 0 <= b < features.cols]
    if bad:
        raise IndexError(f"band index out of range: {bad}")
    wl = None if features.wavelengths_nm is None else features.wavelengths_nm[idx]
    return FeatureMatrix(features.values[:, idx], features.sample_ids, wl)


def accuracy_vs_k_sweep(train, val, report: ImportanceReport, k_values: Sequence[int],
                        classifier: str = "boosted", seed: int = 0, **params) -> SweepResult:
    """Validation accuracy when training on the top-k bands, for each k.

    ``train`` and ``val`` are ``(FeatureMatrix, labels)`` pairs.
    """
    if classifier not in CLASSIFIERS:
        raise ValueError(f"unknown classifier {classifier!r}; choose from {CLASSIFIERS}")
    (x_tr, y_tr), (x_va, y_va) = train, val
    if x_tr.rows == 0 or x_va.rows == 0:
        raise ValueError("train and validation splits must be nonempty")
    accs = []
    for k in k_values:
        bands = top_k_bands(report, k)
        model = train_named(classifier, restrict_features(x_tr, bands), y_tr, seed=seed, **params)
        _, acc = evaluate(predict(model, restrict_features(x_va, bands)), y_va)
        accs.append(acc)
    return SweepResult(tuple(int(k) for k in k_values), tuple(accs), classifier, seed)


def window_report(report: ImportanceReport, k: int,
                  windows: Sequence[tuple[float, float]]) -> WindowFractions:
    """Fraction of the top-k bands whose wavelength falls in each closed window."""
    if report.wavelengths_nm is None:
        raise ValueError("report carries no wavelengths")
    spans = sorted((float(lo), float(hi)) for lo, hi in windows)
    for lo, hi in spans:
        if not lo < hi:
            raise ValueError(f"window ({lo}, {hi}) must have lo < hi")
    for (_, hi_a), (lo_b, _) in zip(spans, spans[1:]):
        if lo_b <= hi_a:
            raise ValueError("windows overlap")
    wl = report.wavelengths_nm[top_k_bands(report, k)]
    masks = [(wl >= lo) & (wl <= hi) for lo, hi in windows]
    inside = tuple(float(np.mean(m)) for m in masks)
    covered = np.logical_or.reduce(masks) if masks else np.zeros(wl.size, dtype=bool)
    return WindowFractions(inside, float(np.mean(~covered)))


# --------------------------------------------------------------------------
# vegetation index baselines


def _band_value(spectrum: Spectrum, nm: float) -> float:
    wl = spectrum.wavelengths_nm
    if wl is None:
        raise ValueError("spectrum has no wavelengths")
    if not wl[0] <= nm <= wl[-1]:
        raise ValueError(f"{nm} nm is outside the sensor range {wl[0]}-{wl[-1]} nm")
    return float(spectrum.values[nearest_band(wl, nm)])


def _normalized_difference(a: float, b: float) -> float:
    denom = a + b
    if abs(denom) < DEGENERATE_DENOM:
        return 0.0
    return float(np.clip((a - b) / denom, -1.0, 1.0))


def ndvi(spectrum: Spectrum, red_nm: float = 670.0, nir_nm: float = 800.0) -> float:
    return _normalized_difference(_band_value(spectrum, nir_nm), _band_value(spectrum, red_nm))


def ngrdi(spectrum: Spectrum, green_nm: float = 550.0, red_nm: float = 670.0) -> float:
    return _normalized_difference(_band_value(spectrum, green_nm), _band_value(spectrum, red_nm))


# --------------------------------------------------------------------------
# plot-data CSVs


def save_importance_csv(report: ImportanceReport, path) -> None:
    """Rows in band order: ``band,wavelength_nm,score``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["band", "wavelength_nm", "score"])
        for b, s in enumerate(report.scores):
            wl = "" if report.wavelengths_nm is None else repr(float(report.wavelengths_nm[b]))
            w.writerow([b, wl, repr(float(s))])


def load_importance_csv(path, method) -> ImportanceReport:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["band", "wavelength_nm", "score"]:
            raise ValueError(f"{path}: not an importance CSV")
        rows = list(reader)
    if [int(r[0]) for r in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: band column must run 0..n-1")
    wl = None if rows and rows[0][1] == "" else np.array([float(r[1]) for r in rows])
    return ImportanceReport.from_scores([float(r[2]) for r in rows], method, wl)


def save_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "accuracy"])
        for k, acc in zip(result.k_values, result.accuracies):
            w.writerow([k, repr(float(acc))])


def load_sweep_csv(path, classifier: str = "", seed: int = 0) -> SweepResult:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["k", "accuracy"]:
            raise ValueError(f"{path}: not a sweep CSV")
        rows = list(reader)
    return SweepResult(tuple(int(r[0]) for r in rows), tuple(float(r[1]) for r in rows),
                       classifier, seed)


class TopKBandSelector(SelectorMixin, BaseEstimator):
    """Keep the ``k`` most important bands.

    Without ``y`` the selector labels the samples itself with
    ``KMeansPseudoLabeler`` (K chosen by silhouette unless ``n_clusters`` is set).

    Attributes
    ----------
    report_ : ImportanceReport
    bands_ : list of int
        Selected bands in ranking order.
    pseudo_labels_ : ndarray or None
    """

    def __init__(self, k=30, method="impurity", n_clusters=None, k_min=2, k_max=8, seed=0,
                 trees=100, max_depth=3, bins=16):
        self.k = k
        self.method = method
        self.n_clusters = n_clusters
        self.k_min = k_min
        self.k_max = k_max
        self.seed = seed
        self.trees = trees
        self.max_depth = max_depth
        self.bins = bins

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        feats = FeatureMatrix.from_array(X)
        self.pseudo_labels_ = None
        if y is None:
            labeler = KMeansPseudoLabeler(self.n_clusters, self.k_min, self.k_max, self.seed).fit(X)
            self.pseudo_labels_ = labeler.labels_
            labels = labeler.pseudo_labels_
        else:
            _, labels = np.unique(np.asarray(y), return_inverse=True)
        self.report_ = compute_importance(self.method, feats, labels, self.seed,
                                          self.trees, self.max_depth, self.bins)
        self.bands_ = top_k_bands(self.report_, min(self.k, X.shape[1]))
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "bands_")
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.bands_] = True
        return mask
