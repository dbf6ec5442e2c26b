"""A small, deterministic random forest.

Bagged CART trees with Gini impurity: each tree trains on a bootstrap
sample and examines ceil(sqrt(d)) candidate features per split. There is
no depth limit and leaves may hold a single sample. Every tree owns a
generator spawned from the forest seed, so results do not depend on how
many workers fit the trees or in what order.

Class probabilities are vote fractions: the share of trees predicting
each class, not averaged leaf distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLabels, DimensionError, InvalidInput

N_TREES = 100


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    klass: int = -1  # set on leaves

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


def _best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray, n_classes: int):
    """Lowest weighted Gini impurity over candidate features and thresholds.

    Returns (feature, threshold) or None when no candidate feature varies.
    Ties keep the first candidate encountered, so the outcome is fixed by
    the generator that drew the candidate order.
    """
    n = len(y)
    onehot = np.zeros((n, n_classes), dtype=np.float64)
    onehot[np.arange(n), y] = 1.0
    totals = onehot.sum(axis=0)
    best = None
    best_score = np.inf
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cut = np.flatnonzero(xs[:-1] < xs[1:])  # split between distinct values
        if cut.size == 0:
            continue
        left_counts = np.cumsum(onehot[order], axis=0)[cut]
        n_left = (cut + 1).astype(np.float64)
        n_right = n - n_left
        right_counts = totals[None, :] - left_counts
        gini_left = 1.0 - np.sum((left_counts / n_left[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right_counts / n_right[:, None]) ** 2, axis=1)
        weighted = (n_left * gini_left + n_right * gini_right) / n
        at = int(np.argmin(weighted))
        if weighted[at] < best_score:
            best_score = float(weighted[at])
            threshold = (xs[cut[at]] + xs[cut[at] + 1]) / 2.0
            best = (int(f), float(threshold))
    return best


def _grow(X: np.ndarray, y: np.ndarray, n_classes: int, m_try: int, rng) -> _Node:
    counts = np.bincount(y, minlength=n_classes)
    majority = int(np.argmax(counts))  # ties go to the smallest class code
    if counts[majority] == len(y):
        return _Node(klass=majority)
    features = rng.choice(X.shape[1], size=m_try, replace=False)
    split = _best_split(X, y, features, n_classes)
    if split is None:
        return _Node(klass=majority)
    f, threshold = split
    mask = X[:, f] <= threshold
    node = _Node(feature=f, threshold=threshold)
    node.left = _grow(X[mask], y[mask], n_classes, m_try, rng)
    node.right = _grow(X[~mask], y[~mask], n_classes, m_try, rng)
    return node


class DecisionTree:
    """One CART tree; callers supply the generator and class count."""

    def __init__(self):
        self.root: _Node | None = None

    def fit(self, X: np.ndarray, y: np.ndarray, n_classes: int, rng) -> "DecisionTree":
        m_try = max(1, math.ceil(math.sqrt(X.shape[1])))
        self.root = _grow(X, y, n_classes, m_try, rng)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X), dtype=np.int64)
        for i, row in enumerate(X):
            node = self.root
            while not node.is_leaf:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.klass
        return out


class RandomForest:
    """Vote-fraction ensemble of N_TREES bagged CART trees."""

    def __init__(self, n_trees: int = N_TREES, seed: int = 0):
        self.n_trees = n_trees
        self.seed = seed
        self.trees: list[DecisionTree] = []
        self.classes_: list = []

    def fit(self, X: np.ndarray, y) -> "RandomForest":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] < 1:
            raise InvalidInput("feature matrix must be 2-D with at least one column")
        y = np.asarray(y)
        if len(y) != len(X):
            raise DimensionError("labels must align with feature rows")
        self.classes_ = sorted(set(y.tolist()))
        if len(self.classes_) < 2:
            raise DegenerateLabels("training labels collapse to a single class")
        code = {c: i for i, c in enumerate(self.classes_)}
        codes = np.array([code[v] for v in y.tolist()], dtype=np.int64)
        n = len(X)
        # one child seed per tree: identical results for any fitting order
        seeds = np.random.SeedSequence(self.seed).spawn(self.n_trees)
        self.trees = []
        for s in seeds:
            rng = np.random.default_rng(s)
            sample = rng.integers(0, n, size=n)
            tree = DecisionTree().fit(X[sample], codes[sample], len(self.classes_), rng)
            self.trees.append(tree)
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        votes = np.zeros((len(X), len(self.classes_)), dtype=np.float64)
        for tree in self.trees:
            pred = tree.predict(X)
            votes[np.arange(len(X)), pred] += 1.0
        return votes / self.n_trees

    def predict(self, X: np.ndarray):
        proba = self.predict_proba(X)
        picks = np.argmax(proba, axis=1)  # ties go to the smallest class code
        return [self.classes_[i] for i in picks]


def macro_f1(y_true, y_pred) -> float:
    """Unweighted mean of per-class F1 over every class seen in either side.

    Classes with zero precision-recall mass score 0, so a constant
    predictor on balanced c-class data earns exactly its single useful
    class's F1 divided by c.
    """
    y_true = list(y_true)
    y_pred = list(y_pred)
    if len(y_true) != len(y_pred):
        raise DimensionError("prediction length must match the truth")
    classes = sorted(set(y_true) | set(y_pred))
    scores = []
    for c in classes:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        scores.append(
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    return float(np.mean(scores))
