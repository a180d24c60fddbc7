"""Boosted shallow trees and a linear SVM for mild/serious classification, plus evaluation.

Serious is the positive class throughout.  A decision margin of exactly zero
resolves to Mild for both classifiers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import __version__
from ._trees import Tree, grow_residual_tree
from .hsi_core import ClassLabel, Dataset
from .preprocess import FeatureMatrix

NEWTON_DAMPING = 1e-9
MAX_HALVINGS = 30


def _as_array(features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        return features.values
    return check_array(features, dtype=np.float64)


def encode_labels(labels: Sequence) -> np.ndarray:
    """ClassLabel (or its string value) -> 1 for Serious, 0 for Mild."""
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab is None:
            raise ValueError(f"sample {i} is unlabeled")
        out[i] = ClassLabel(lab) is ClassLabel.SERIOUS
    return out


def decode_labels(y: np.ndarray) -> list:
    return [ClassLabel.SERIOUS if v else ClassLabel.MILD for v in y]


def _require_both_classes(y: np.ndarray) -> None:
    if y.size == 0 or y.min() == y.max():
        raise ValueError("training labels must contain both mild and serious samples")


@dataclass(frozen=True, eq=False)
class BoostedTreesModel:
    trees: tuple
    learning_rate: float
    base_score: float
    max_depth: int
    n_features: int
    seed: int = 0
    # training log-loss before the first round and after every round
    loss_history: tuple = field(default=(), repr=False)

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        margin = np.full(x.shape[0], self.base_score)
        for tree in self.trees:
            margin += self.learning_rate * tree.predict(x)
        return margin


@dataclass(frozen=True, eq=False)
class LinearSvmModel:
    weights: np.ndarray
    bias: float
    reg: float = 1e-3
    epochs: int = 50
    seed: int = 0
    # primal objective after step 1, after each earlier epoch, and of the returned weights
    objective_trace: tuple = field(default=(), repr=False)

    @property
    def n_features(self) -> int:
        return self.weights.size

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights + self.bias


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total


def log_loss(y: np.ndarray, margin: np.ndarray) -> float:
    """Mean logistic loss for 0/1 targets and raw margins."""
    sign = 2.0 * y - 1.0
    return float(np.logaddexp(0.0, -sign * margin).mean())


def train_val_split(dataset: Dataset, val_count: int, seed: int = 0):
    """Seeded shuffle-and-split; both parts keep the original row order."""
    n = len(dataset)
    if not 0 < val_count < n:
        raise ValueError(f"val_count must be in (0, {n}), got {val_count}")
    perm = np.random.default_rng(seed).permutation(n)
    val = np.sort(perm[:val_count])
    train = np.sort(perm[val_count:])
    return dataset.subset(train), dataset.subset(val)


def train_boosted(features, labels, rounds: int = 100, learning_rate: float = 0.1,
                  max_depth: int = 3, seed: int = 0) -> BoostedTreesModel:
    """Gradient boosting of depth-limited regression trees on logistic loss.

    Each round fits the negative gradient by exhaustive least-squares splits
    and sets leaves to the damped Newton step.  A leaf whose shrunken step
    would raise the training loss of its own samples is halved until it does
    not, so the training loss never increases from one round to the next.
    """
    x = _as_array(features)
    y = encode_labels(labels) if not isinstance(labels, np.ndarray) else labels.astype(np.int64)
    if x.shape[0] != y.size:
        raise ValueError(f"{x.shape[0]} rows but {y.size} labels")
    _require_both_classes(y)
    if rounds < 1 or max_depth < 1:
        raise ValueError("rounds and max_depth must be >= 1")
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must lie in (0, 1]")

    pos = y.mean()
    base = float(np.log(pos / (1.0 - pos)))
    margin = np.full(y.size, base)
    sign = 2.0 * y - 1.0
    history = [log_loss(y, margin)]
    trees = []
    for _ in range(rounds):
        p = 1.0 / (1.0 + np.exp(-margin))
        residual = y - p
        hessian = p * (1.0 - p)
        tree = grow_residual_tree(x, residual, hessian, max_depth, NEWTON_DAMPING)
        leaf_of = tree.apply(x)
        values = tree.value.copy()
        for leaf in np.unique(leaf_of):
            rows = leaf_of == leaf
            before = np.logaddexp(0.0, -sign[rows] * margin[rows]).sum()
            for _ in range(MAX_HALVINGS):
                after = np.logaddexp(0.0, -sign[rows] * (margin[rows] + learning_rate * values[leaf])).sum()
                if after <= before:
                    break
                values[leaf] *= 0.5
            else:
                values[leaf] = 0.0
        tree = Tree(tree.feature, tree.threshold, tree.left, tree.right, values)
        margin = margin + learning_rate * values[leaf_of]
        trees.append(tree)
        history.append(log_loss(y, margin))
    return BoostedTreesModel(tuple(trees), float(learning_rate), base, max_depth, x.shape[1],
                             seed, tuple(history))


def svm_objective(w_aug: np.ndarray, x_aug: np.ndarray, sign: np.ndarray, reg: float) -> float:
    hinge = np.maximum(0.0, 1.0 - sign * (x_aug @ w_aug))
    return float(0.5 * reg * w_aug @ w_aug + hinge.mean())


def train_svm(features, labels, epochs: int = 50, reg: float = 1e-3, seed: int = 0) -> LinearSvmModel:
    """Primal hinge-loss SVM by stochastic subgradient descent with step 1/(reg*t).

    The bias is learned as the weight of a constant input and is regularized
    with the other weights.  The returned weights average the iterates of the
    final epoch, which damps the last-iterate oscillation of this step size.
    """
    x = _as_array(features)
    y = encode_labels(labels) if not isinstance(labels, np.ndarray) else labels.astype(np.int64)
    if x.shape[0] != y.size:
        raise ValueError(f"{x.shape[0]} rows but {y.size} labels")
    _require_both_classes(y)
    if epochs < 1 or reg <= 0:
        raise ValueError("epochs must be >= 1 and reg > 0")

    x_aug = np.hstack([x, np.ones((x.shape[0], 1))])
    sign = 2.0 * y - 1.0
    w = np.zeros(x_aug.shape[1])
    rng = np.random.default_rng(seed)
    trace = []
    t = 0
    for epoch in range(epochs):
        last = epoch == epochs - 1
        w_sum = np.zeros_like(w)
        for i in rng.permutation(x.shape[0]):
            t += 1
            eta = 1.0 / (reg * t)
            violated = sign[i] * (x_aug[i] @ w) < 1.0
            w *= 1.0 - eta * reg
            if violated:
                w += eta * sign[i] * x_aug[i]
            if t == 1:
                trace.append(svm_objective(w, x_aug, sign, reg))
            if last:
                w_sum += w
        if not last:
            trace.append(svm_objective(w, x_aug, sign, reg))
    w = w_sum / x.shape[0]
    trace.append(svm_objective(w, x_aug, sign, reg))
    return LinearSvmModel(w[:-1].copy(), float(w[-1]), float(reg), int(epochs), seed, tuple(trace))


Model = Union[BoostedTreesModel, LinearSvmModel]


def predict(model: Model, features) -> list:
    x = _as_array(features)
    if x.shape[1] != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, got {x.shape[1]}")
    return decode_labels(model.decision_function(x) > 0)


def evaluate(predictions: Sequence, truth: Sequence):
    """Confusion matrix (Serious positive) and accuracy = (TP + TN) / total."""
    if len(predictions) != len(truth):
        raise ValueError(f"{len(predictions)} predictions but {len(truth)} truth labels")
    if not len(truth):
        raise ValueError("nothing to evaluate")
    p = encode_labels(predictions).astype(bool)
    t = encode_labels(truth).astype(bool)
    cm = ConfusionMatrix(
        tp=int(np.sum(p & t)), tn=int(np.sum(~p & ~t)),
        fp=int(np.sum(p & ~t)), fn=int(np.sum(~p & t)),
    )
    return cm, cm.accuracy


CLASSIFIERS = ("boosted", "svm")


def train_named(name: str, features, labels, seed: int = 0, **params) -> Model:
    if name == "boosted":
        return train_boosted(features, labels, seed=seed, **params)
    if name == "svm":
        return train_svm(features, labels, seed=seed, **params)
    raise ValueError(f"unknown classifier {name!r}; choose from {CLASSIFIERS}")


# --------------------------------------------------------------------------
# persistence


def _num(x) -> str:
    return f"{float(x):.17g}"


def model_to_dict(model: Model) -> dict:
    if isinstance(model, BoostedTreesModel):
        return {
            "kind": "boosted_trees",
            "version": __version__,
            "seed": model.seed,
            "hyperparameters": {
                "rounds": len(model.trees),
                "learning_rate": _num(model.learning_rate),
                "max_depth": model.max_depth,
            },
            "n_features": model.n_features,
            "base_score": _num(model.base_score),
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": [_num(v) for v in t.threshold],
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": [_num(v) for v in t.value],
                }
                for t in model.trees
            ],
        }
    if isinstance(model, LinearSvmModel):
        return {
            "kind": "linear_svm",
            "version": __version__,
            "seed": model.seed,
            "hyperparameters": {"epochs": model.epochs, "reg": _num(model.reg)},
            "n_features": model.n_features,
            "weights": [_num(v) for v in model.weights],
            "bias": _num(model.bias),
        }
    raise TypeError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d: dict) -> Model:
    kind = d.get("kind")
    if kind == "boosted_trees":
        hp = d["hyperparameters"]
        trees = tuple(
            Tree.from_dict({**t, "threshold": [float(v) for v in t["threshold"]],
                            "value": [float(v) for v in t["value"]]})
            for t in d["trees"]
        )
        return BoostedTreesModel(trees, float(hp["learning_rate"]), float(d["base_score"]),
                                 int(hp["max_depth"]), int(d["n_features"]), int(d["seed"]))
    if kind == "linear_svm":
        hp = d["hyperparameters"]
        return LinearSvmModel(np.array([float(v) for v in d["weights"]]), float(d["bias"]),
                              float(hp["reg"]), int(hp["epochs"]), int(d["seed"]))
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model: Model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# scikit-learn estimators


class _BinaryClassifier(ClassifierMixin, BaseEstimator):
    """Maps arbitrary binary targets: ``classes_[1]`` plays the Serious role."""

    def _encode_fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if self.classes_.size != 2:
            raise ValueError(f"expected exactly 2 classes, got {self.classes_.size} class(es)")
        self.n_features_in_ = X.shape[1]
        return X, (y == self.classes_[1]).astype(np.int64)

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.model_.decision_function(X)

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]


class BoostedTreesClassifier(_BinaryClassifier):
    def __init__(self, rounds=100, learning_rate=0.1, max_depth=3, seed=0):
        self.rounds = rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.seed = seed

    def fit(self, X, y):
        X, y01 = self._encode_fit(X, y)
        self.model_ = train_boosted(X, y01, self.rounds, self.learning_rate, self.max_depth, self.seed)
        return self

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.column_stack([1.0 - p, p])


class LinearSVMClassifier(_BinaryClassifier):
    def __init__(self, epochs=50, reg=1e-3, seed=0):
        self.epochs = epochs
        self.reg = reg
        self.seed = seed

    def fit(self, X, y):
        X, y01 = self._encode_fit(X, y)
        self.model_ = train_svm(X, y01, self.epochs, self.reg, self.seed)
        self.coef_ = self.model_.weights[None, :]
        self.intercept_ = np.array([self.model_.bias])
        return self
