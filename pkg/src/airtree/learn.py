"""Decision-tree learners written against numpy.

``MultiLabelTree`` is a multi-output CART classifier used in the overfitting
regime: it is grown until every training example is separated, so replaying
the training set reproduces its labels exactly.  ``RandomForest`` is a
bagged ensemble of single-output trees used to tell high-overlap queries
from low-overlap ones.

Both share one split search: Gini impurity summed over output columns,
candidate thresholds at midpoints between consecutive distinct feature
values, ties going to the lower feature index and then the lower threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_VERSION = 1

# Byte accounting for model_size_bytes().  Every tree node is one 16-byte
# record: feature index, float64 threshold and right-child offset (the left
# child follows its parent).  A binary leaf keeps its class in that record.
# A multi-label leaf additionally stores its label vector bit-packed over
# the label columns the tree has seen, and the tree stores those columns'
# leaf IDs as uint32.
NODE_BYTES = 16
CLASS_ID_BYTES = 4


class TrainingError(ValueError):
    pass


def _best_split(X: np.ndarray, Y: np.ndarray, features: Sequence[int]):
    """Best (impurity, feature, threshold) over ``features``, or None.

    ``Y`` holds 0/1 indicator columns.  Impurity is the size-weighted sum of
    per-column Gini of the two children.
    """
    n = len(X)
    total = Y.sum(axis=0)
    active = (total > 0) & (total < n)
    Ya = Y[:, active]
    tot = total[active]
    nl = np.arange(1, n, dtype=np.float64)
    nr = n - nl
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        valid = xs[:-1] < xs[1:]
        if not valid.any():
            continue
        if Ya.shape[1]:
            cl = np.cumsum(Ya[order], axis=0)[:-1]
            cr = tot - cl
            imp = ((cl * (nl[:, None] - cl)).sum(axis=1) / nl
                   + (cr * (nr[:, None] - cr)).sum(axis=1) / nr)
        else:
            imp = np.zeros(n - 1)
        imp = np.where(valid, imp, np.inf)
        i = int(np.argmin(imp))
        if best is None or imp[i] < best[0]:
            lo, hi = float(xs[i]), float(xs[i + 1])
            thr = (lo + hi) / 2.0
            if not lo <= thr < hi:
                thr = lo
            best = (float(imp[i]), int(f), thr)
    return best


@dataclass
class _Grown:
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    leaf: list[int] = field(default_factory=list)  # index into per-leaf payloads, -1 for splits
    depth: int = 0


def _grow_tree(X: np.ndarray, Y: np.ndarray, leaf_value, choose_features,
               max_depth: int | None, min_samples_split: int) -> tuple[_Grown, list]:
    """Depth-first CART growth with nodes numbered in pre-order."""
    t = _Grown()
    payloads: list = []

    def new_node() -> int:
        t.feature.append(-1)
        t.threshold.append(0.0)
        t.left.append(-1)
        t.right.append(-1)
        t.leaf.append(-1)
        return len(t.feature) - 1

    # stack items: (parent, side, sample indices, depth); parent -1 is the root
    stack = [(-1, "", np.arange(len(X)), 0)]
    while stack:
        parent, side, idx, depth = stack.pop()
        node = new_node()
        if parent >= 0:
            if side == "L":
                t.left[parent] = node
            else:
                t.right[parent] = node
        t.depth = max(t.depth, depth)
        Yn = Y[idx]
        pure = bool((Yn == Yn[0]).all())
        split = None
        if not pure and len(idx) >= min_samples_split and (max_depth is None or depth < max_depth):
            split = choose_features(X[idx], Yn)
        if split is None:
            t.leaf[node] = len(payloads)
            payloads.append(leaf_value(Yn))
            continue
        _, f, thr = split
        go_left = X[idx, f] <= thr
        t.feature[node] = f
        t.threshold[node] = thr
        stack.append((node, "R", idx[~go_left], depth + 1))
        stack.append((node, "L", idx[go_left], depth + 1))
    return t, payloads


class _TreeBase:
    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    leaf: list[int]

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def leaf_count(self) -> int:
        return sum(1 for v in self.leaf if v >= 0)

    def _apply(self, x: Sequence[float]) -> int:
        node = 0
        feature, threshold, left, right = self.feature, self.threshold, self.left, self.right
        while feature[node] >= 0:
            node = left[node] if x[feature[node]] <= threshold[node] else right[node]
        return self.leaf[node]

    def _topology(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left, "right": self.right, "leaf": self.leaf}


# -- multi-label tree ----------------------------------------------------------


class MultiLabelTree(_TreeBase):
    """Multi-output CART classifier over 4 query-rectangle features.

    Leaf values are per-label majorities of the training examples reaching
    the leaf (a label is set when at least half of them carry it).  Only
    label columns set in at least one training example are stored; every
    other column is predicted unset.
    """

    def __init__(self, n_labels: int, classes: tuple[int, ...], max_depth: int = 30,
                 min_samples_split: int = 2):
        self.n_labels = n_labels
        self.classes = classes
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.feature: list[int] = [-1]
        self.threshold: list[float] = [0.0]
        self.left: list[int] = [-1]
        self.right: list[int] = [-1]
        self.leaf: list[int] = [0]
        self.values: list[tuple[int, ...]] = [()]
        self.depth = 0
        self.n_examples = 0

    def predict(self, features: Sequence[float]) -> set[int]:
        return set(self.values[self._apply(features)])

    def size_bytes(self) -> int:
        label_bytes = math.ceil(len(self.classes) / 8)
        return (self.node_count * NODE_BYTES + self.leaf_count * label_bytes
                + len(self.classes) * CLASS_ID_BYTES)

    def to_dict(self) -> dict:
        return {
            "kind": "multilabel-tree", "version": MODEL_VERSION,
            "n_labels": self.n_labels, "classes": list(self.classes),
            "max_depth": self.max_depth, "min_samples_split": self.min_samples_split,
            "n_examples": self.n_examples, "depth": self.depth,
            **self._topology(), "values": [list(v) for v in self.values],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MultiLabelTree":
        if d.get("kind") != "multilabel-tree" or d.get("version") != MODEL_VERSION:
            raise ValueError("not a multi-label tree model")
        m = cls(d["n_labels"], tuple(d["classes"]), d["max_depth"], d["min_samples_split"])
        m.feature, m.threshold, m.left, m.right, m.leaf = (
            list(d["feature"]), [float(v) for v in d["threshold"]], list(d["left"]),
            list(d["right"]), list(d["leaf"]))
        m.values = [tuple(v) for v in d["values"]]
        m.depth, m.n_examples = d["depth"], d["n_examples"]
        return m

    def __eq__(self, other):
        if not isinstance(other, MultiLabelTree):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _feature_matrix(examples) -> np.ndarray:
    X = np.array([e.features for e in examples], dtype=np.float64).reshape(-1, 4)
    if not np.isfinite(X).all():
        raise TrainingError("features must be finite")
    return X


def train_mltree(examples: Sequence, max_depth: int = 30, min_samples_split: int = 2) -> MultiLabelTree:
    """Fit a multi-label tree to TrainingExample-like objects (features, labels)."""
    if not examples:
        raise TrainingError("empty training set")
    n_labels = len(examples[0].labels)
    if any(len(e.labels) != n_labels for e in examples):
        raise TrainingError("inconsistent label vector lengths")
    if max_depth < 1 or min_samples_split < 2:
        raise TrainingError("max_depth must be >= 1 and min_samples_split >= 2")
    X = _feature_matrix(examples)
    Yfull = np.array([np.asarray(e.labels, dtype=bool) for e in examples]).reshape(len(examples), n_labels)
    cols = np.flatnonzero(Yfull.any(axis=0))
    classes = tuple(int(c) for c in cols)
    Y = Yfull[:, cols].astype(np.float64)

    def leaf_value(Yn: np.ndarray) -> tuple[int, ...]:
        on = Yn.sum(axis=0) * 2 >= len(Yn)
        return tuple(classes[i] for i in np.flatnonzero(on))

    grown, payloads = _grow_tree(X, Y, leaf_value, lambda Xn, Yn: _best_split(Xn, Yn, range(4)),
                                 max_depth, min_samples_split)
    model = MultiLabelTree(n_labels, classes, max_depth, min_samples_split)
    model.feature, model.threshold = grown.feature, grown.threshold
    model.left, model.right, model.leaf = grown.left, grown.right, grown.leaf
    model.values = payloads
    model.depth = grown.depth
    model.n_examples = len(examples)
    return model


def predict_mltree(model: MultiLabelTree, features: Sequence[float]) -> set[int]:
    return model.predict(features)


def subset_accuracy(model: MultiLabelTree, examples: Sequence) -> float:
    if not examples:
        return 1.0
    hits = sum(model.predict(e.features) == set(np.flatnonzero(e.labels).tolist()) for e in examples)
    return hits / len(examples)


# -- random forest -----------------------------------------------------------


class BinaryTree(_TreeBase):
    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.leaf: list[int] = []
        self.classes: list[int] = []  # majority class per leaf payload
        self.depth = 0

    def predict(self, features: Sequence[float]) -> int:
        return self.classes[self._apply(features)]

    def to_dict(self) -> dict:
        return {**self._topology(), "classes": self.classes, "depth": self.depth}

    @classmethod
    def from_dict(cls, d: dict) -> "BinaryTree":
        t = cls()
        t.feature, t.threshold, t.left, t.right, t.leaf = (
            list(d["feature"]), [float(v) for v in d["threshold"]], list(d["left"]),
            list(d["right"]), list(d["leaf"]))
        t.classes = list(d["classes"])
        t.depth = d["depth"]
        return t


class RandomForest:
    """Bagged binary trees with per-split feature subsampling.

    Prediction is a hard majority vote; an even split goes to class 0.
    """

    def __init__(self, n_trees: int = 100, max_features: int = 2, seed: int = 0):
        self.n_trees = n_trees
        self.max_features = max_features
        self.seed = seed
        self.trees: list[BinaryTree] = []
        self.n_examples = 0

    def votes(self, features: Sequence[float]) -> int:
        return sum(t.predict(features) for t in self.trees)

    def predict(self, features: Sequence[float]) -> int:
        return 1 if 2 * self.votes(features) > len(self.trees) else 0

    def size_bytes(self) -> int:
        return sum(t.node_count for t in self.trees) * NODE_BYTES

    def to_dict(self) -> dict:
        return {"kind": "random-forest", "version": MODEL_VERSION, "n_trees": self.n_trees,
                "max_features": self.max_features, "seed": self.seed,
                "n_examples": self.n_examples, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        if d.get("kind") != "random-forest" or d.get("version") != MODEL_VERSION:
            raise ValueError("not a random forest model")
        rf = cls(d["n_trees"], d["max_features"], d["seed"])
        rf.n_examples = d["n_examples"]
        rf.trees = [BinaryTree.from_dict(t) for t in d["trees"]]
        return rf

    def __eq__(self, other):
        if not isinstance(other, RandomForest):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _train_binary_tree(X: np.ndarray, y: np.ndarray, max_features: int,
                       rng: np.random.Generator) -> BinaryTree:
    Y = y.reshape(-1, 1).astype(np.float64)
    n_feat = X.shape[1]

    def choose(Xn, Yn):
        # draw max_features candidates; keep drawing if none of them can split
        order = rng.permutation(n_feat)
        best = _best_split(Xn, Yn, sorted(order[:max_features].tolist()))
        if best is None and max_features < n_feat:
            best = _best_split(Xn, Yn, sorted(order[max_features:].tolist()))
        return best

    def leaf_value(Yn):
        ones = int(Yn.sum())
        return 1 if 2 * ones > len(Yn) else 0

    grown, payloads = _grow_tree(X, Y, leaf_value, choose, None, 2)
    t = BinaryTree()
    t.feature, t.threshold, t.left, t.right, t.leaf = (
        grown.feature, grown.threshold, grown.left, grown.right, grown.leaf)
    t.classes = payloads
    t.depth = grown.depth
    return t


def train_forest(examples: Sequence, n_trees: int = 100, seed: int = 0,
                 max_features: int | None = None) -> RandomForest:
    """Fit a forest to BinaryExample-like objects (features, label)."""
    if not examples:
        raise TrainingError("empty training set")
    X = _feature_matrix(examples)
    y = np.array([int(e.label) for e in examples])
    if set(np.unique(y).tolist()) != {0, 1}:
        raise TrainingError("router training data holds a single class; "
                            "widen the workload so both high- and low-overlap queries are present")
    if max_features is None:
        max_features = max(1, int(math.sqrt(X.shape[1])))
    rf = RandomForest(n_trees, max_features, seed)
    rf.n_examples = len(examples)
    n = len(X)
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        boot = rng.integers(0, n, size=n)
        rf.trees.append(_train_binary_tree(X[boot], y[boot], max_features, rng))
    return rf


def predict_forest(model: RandomForest, features: Sequence[float]) -> int:
    return model.predict(features)


def binary_accuracy(model: RandomForest, examples: Sequence) -> float:
    if not examples:
        return 1.0
    return sum(model.predict(e.features) == e.label for e in examples) / len(examples)


def majority_baseline(examples: Sequence) -> float:
    if not examples:
        return 1.0
    ones = sum(1 for e in examples if e.label == 1)
    return max(ones, len(examples) - ones) / len(examples)


@dataclass
class ModelMetrics:
    subset_accuracy: float | None = None
    binary_accuracy: float | None = None
    size_bytes: int = 0


def model_size_bytes(model) -> int:
    return model.size_bytes()


# -- persistence ---------------------------------------------------------------


def model_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "multilabel-tree":
        return MultiLabelTree.from_dict(d)
    if kind == "random-forest":
        return RandomForest.from_dict(d)
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model, path: str | Path):
    Path(path).write_text(json.dumps(model.to_dict(), separators=(",", ":")))


def load_model(path: str | Path):
    return model_from_dict(json.loads(Path(path).read_text()))
