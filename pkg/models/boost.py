"""
Gradient-boosted decision trees for binary response prediction.

Second-order (Newton) boosting on the weighted logistic loss with exact
greedy, depth-wise tree growth:

    g_i = w_i (p_i - y_i),  h_i = w_i p_i (1 - p_i)
    gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)]
    leaf = -G/(H+lambda) * learning_rate

Rows go left when x[feature] <= threshold.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Union

import numpy as np
from scipy.special import expit

from analysis.featspace import FeatureMatrix
from trajcore.errors import ModelError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, FeatureMatrix]


@dataclass(frozen=True)
class GbdtConfig:
    n_rounds: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    l2_lambda: float = 1.0
    class_balanced: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ModelError("n_rounds must be >= 1", f"n_rounds={self.n_rounds}")
        if not 0 < self.learning_rate <= 1:
            raise ModelError("learning_rate must be in (0, 1]", f"learning_rate={self.learning_rate}")
        if self.max_depth < 1:
            raise ModelError("max_depth must be >= 1", f"max_depth={self.max_depth}")
        if self.l2_lambda < 0 or self.min_child_weight < 0:
            raise ModelError("l2_lambda and min_child_weight must be >= 0")


@dataclass
class Tree:
    """Flat binary tree; feature -1 marks a leaf, node 0 is the root."""
    feature: List[int] = field(default_factory=list)
    threshold: List[float] = field(default_factory=list)
    left: List[int] = field(default_factory=list)
    right: List[int] = field(default_factory=list)
    value: List[float] = field(default_factory=list)

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        node = np.zeros(len(X), dtype=int)
        rows = np.arange(len(X))
        active = feature[node] >= 0
        while active.any():
            n = node[active]
            go_left = X[rows[active], feature[n]] <= threshold[n]
            node[active] = np.where(go_left, left[n], right[n])
            active = feature[node] >= 0
        return np.asarray(self.value)[node]

    def used_features(self) -> List[int]:
        return sorted({f for f in self.feature if f >= 0})

    def to_dict(self, node: int = 0) -> Dict[str, Any]:
        if self.feature[node] < 0:
            return {"leaf": self.value[node]}
        return {
            "feature": self.feature[node],
            "threshold": self.threshold[node],
            "left": self.to_dict(self.left[node]),
            "right": self.to_dict(self.right[node]),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Tree":
        tree = cls()

        def visit(item):
            index = tree.add_leaf(item.get("leaf", 0.0))
            if "leaf" not in item:
                tree.feature[index] = int(item["feature"])
                tree.threshold[index] = float(item["threshold"])
                tree.left[index] = visit(item["left"])
                tree.right[index] = visit(item["right"])
            return index

        visit(data)
        return tree


@dataclass
class GbdtModel:
    base_score: float
    trees: List[Tree]
    n_features: int
    loss_trace: List[float] = field(default_factory=list)
    feature_names: List[str] = field(default_factory=list)

    def decision_function(self, X: ArrayLike) -> np.ndarray:
        X = _as_array(X)
        if X.shape[1] != self.n_features:
            raise ShapeError("feature count does not match the trained model",
                             f"got {X.shape[1]}, expected {self.n_features}")
        margin = np.full(len(X), self.base_score)
        for tree in self.trees:
            margin += tree.predict(X)
        return margin

    def to_dict(self) -> Dict[str, Any]:
        return {
            "base_score": self.base_score,
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "trees": [tree.to_dict() for tree in self.trees],
            "loss_trace": list(self.loss_trace),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GbdtModel":
        return cls(
            base_score=float(data["base_score"]),
            trees=[Tree.from_dict(t) for t in data["trees"]],
            n_features=int(data["n_features"]),
            loss_trace=list(data.get("loss_trace", [])),
            feature_names=list(data.get("feature_names", [])),
        )


def _as_array(X: ArrayLike) -> np.ndarray:
    values = X.values if isinstance(X, FeatureMatrix) else X
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ShapeError("feature matrix must be 2-D", f"ndim={values.ndim}")
    return values


def _as_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise ModelError("labels must be binary (0/1)")
    if y.min() == y.max():
        raise ModelError("both classes must be present", f"all labels are {int(y[0])}")
    return y


def class_weights(labels) -> np.ndarray:
    """
    Balanced per-sample weights, N / (2 N_c) for a sample of class c.

    The two classes carry equal total weight afterwards.
    """
    y = _as_labels(labels)
    n = len(y)
    n_pos = y.sum()
    return np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * (n - n_pos)))


def _weighted_loss(y: np.ndarray, margin: np.ndarray, w: np.ndarray) -> float:
    # log(1 + e^m) - y m, written stably
    return float(np.sum(w * (np.logaddexp(0.0, margin) - y * margin)) / np.sum(w))


class _TreeBuilder:
    """Exact greedy split search over presorted feature orders."""

    def __init__(self, X: np.ndarray, cfg: GbdtConfig):
        self.X = X
        self.XT = X.T
        self.cfg = cfg
        self.order = np.argsort(X, axis=0, kind="stable").T  # (F, N)
        self.feature_rows = np.arange(X.shape[1])[:, None]

    def build(self, g: np.ndarray, h: np.ndarray) -> Tree:
        tree = Tree()
        self._grow(tree, np.ones(len(g), dtype=bool), g, h, depth=0)
        return tree

    def _leaf_value(self, G: float, H: float) -> float:
        return -G / (H + self.cfg.l2_lambda) * self.cfg.learning_rate

    def _grow(self, tree: Tree, in_node: np.ndarray, g: np.ndarray, h: np.ndarray, depth: int) -> int:
        G, H = float(g[in_node].sum()), float(h[in_node].sum())
        index = tree.add_leaf(self._leaf_value(G, H))
        if depth >= self.cfg.max_depth:
            return index

        split = self._best_split(in_node, g, h, G, H)
        if split is None:
            return index
        feature, threshold = split
        go_left = self.X[:, feature] <= threshold
        tree.feature[index] = feature
        tree.threshold[index] = threshold
        tree.left[index] = self._grow(tree, in_node & go_left, g, h, depth + 1)
        tree.right[index] = self._grow(tree, in_node & ~go_left, g, h, depth + 1)
        return index

    def _best_split(self, in_node, g, h, G, H):
        m = int(in_node.sum())
        n_features = self.X.shape[1]
        if m < 2 or n_features == 0:
            return None
        sub = self.order[in_node[self.order]].reshape(n_features, m)
        xs = self.XT[self.feature_rows, sub]
        GL = np.cumsum(g[sub], axis=1)[:, :-1]
        HL = np.cumsum(h[sub], axis=1)[:, :-1]
        GR, HR = G - GL, H - HL
        lam = self.cfg.l2_lambda
        gain = 0.5 * (GL ** 2 / (HL + lam) + GR ** 2 / (HR + lam) - G ** 2 / (H + lam))
        valid = ((xs[:, 1:] > xs[:, :-1])
                 & (HL >= self.cfg.min_child_weight)
                 & (HR >= self.cfg.min_child_weight))
        gain = np.where(valid, gain, -np.inf)

        # row-major argmax: lowest feature, then lowest threshold
        best = int(np.argmax(gain))
        feature, pos = divmod(best, m - 1)
        if not gain[feature, pos] > 0:
            return None
        lo, hi = xs[feature, pos], xs[feature, pos + 1]
        threshold = (lo + hi) / 2.0
        if not lo <= threshold < hi:
            threshold = lo
        return feature, float(threshold)


def fit(X: ArrayLike, y, cfg: GbdtConfig = GbdtConfig()) -> GbdtModel:
    """
    Fit a boosted ensemble on the weighted logistic loss.

    Args:
        X: (N, F) features (array or FeatureMatrix)
        y: Binary labels
        cfg: Boosting configuration

    Returns:
        GbdtModel with base_score = log-odds of the weighted prior
    """
    names = X.names if isinstance(X, FeatureMatrix) else []
    X = _as_array(X)
    y = _as_labels(y)
    if len(X) != len(y):
        raise ShapeError("X and y differ in length", f"{len(X)} != {len(y)}")
    if not np.all(np.isfinite(X)):
        raise ModelError("features must be finite")

    w = class_weights(y) if cfg.class_balanced else np.ones(len(y))
    prior = float(np.sum(w * y) / np.sum(w))
    base_score = float(np.log(prior / (1.0 - prior)))

    builder = _TreeBuilder(X, cfg)
    margin = np.full(len(y), base_score)
    trees: List[Tree] = []
    trace = [_weighted_loss(y, margin, w)]
    for round_index in range(cfg.n_rounds):
        p = expit(margin)
        g = w * (p - y)
        h = w * p * (1.0 - p)
        tree = builder.build(g, h)
        if tree.feature[0] < 0:
            logger.debug("round %d: no split with positive gain, stopping", round_index)
            break
        trees.append(tree)
        margin += tree.predict(X)
        trace.append(_weighted_loss(y, margin, w))

    logger.debug("GBDT: %d trees, loss %.5f -> %.5f", len(trees), trace[0], trace[-1])
    return GbdtModel(base_score, trees, X.shape[1], trace, names)


def predict_proba(model: GbdtModel, X: ArrayLike) -> np.ndarray:
    """sigmoid(base_score + sum of tree outputs)."""
    return expit(model.decision_function(X))
