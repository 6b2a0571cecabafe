"""CART decision tree, random forest and binomial-deviance gradient boosting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..seeding import derive_seed
from . import _kernels as K


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @classmethod
    def grow(cls, X, target, samples, *, max_depth=None, min_leaf=1, max_features=None,
             seed=0, hess=None, newton_leaves=False) -> "Tree":
        d = X.shape[1]
        arrays = K.build_tree(
            np.ascontiguousarray(X, dtype=np.float64),
            np.ascontiguousarray(target, dtype=np.float64),
            np.ones(len(target)) if hess is None else np.ascontiguousarray(hess, dtype=np.float64),
            np.ascontiguousarray(samples, dtype=np.int64),
            -1 if max_depth is None else int(max_depth),
            int(min_leaf),
            d if max_features is None else int(max_features),
            int(seed),
            bool(newton_leaves),
        )
        return cls(*arrays)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X) -> np.ndarray:
        return K.tree_apply(self.feature, self.threshold, self.left, self.right, self.value,
                            np.ascontiguousarray(X, dtype=np.float64))

    def split_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("feature", "threshold", "left", "right", "value", "cover")}

    @classmethod
    def from_dict(cls, data) -> "Tree":
        return cls(np.asarray(data["feature"], np.int64), np.asarray(data["threshold"], float),
                   np.asarray(data["left"], np.int64), np.asarray(data["right"], np.int64),
                   np.asarray(data["value"], float), np.asarray(data["cover"], float))


def stack_trees(trees, values=None):
    """Concatenate trees into flat arrays with per-tree root offsets."""
    offsets = np.cumsum([0] + [t.n_nodes for t in trees[:-1]]).astype(np.int64)
    shift = lambda arr, off: np.where(arr >= 0, arr + off, -1)
    feature = np.concatenate([t.feature for t in trees])
    threshold = np.concatenate([t.threshold for t in trees])
    left = np.concatenate([shift(t.left, o) for t, o in zip(trees, offsets)])
    right = np.concatenate([shift(t.right, o) for t, o in zip(trees, offsets)])
    value = np.concatenate(values if values is not None else [t.value for t in trees])
    return feature, threshold, left, right, value, offsets


class DecisionTree:
    def __init__(self, max_depth=None, min_leaf=1):
        self.max_depth = max_depth
        self.min_leaf = int(min_leaf)
        self.tree_: Tree | None = None

    def fit(self, X, y, seed=0):
        self.tree_ = Tree.grow(X, y, np.arange(len(y)), max_depth=self.max_depth,
                               min_leaf=self.min_leaf, seed=derive_seed(seed, 0))
        return self

    def predict_proba(self, X):
        return self.tree_.apply(X)

    def shap_trees(self):
        return [self.tree_], [self.tree_.value], np.ones(1)

    def to_dict(self):
        return {"tree": self.tree_.to_dict()}

    @classmethod
    def from_dict(cls, params, state):
        model = cls(**params)
        model.tree_ = Tree.from_dict(state["tree"])
        return model


class RandomForest:
    """Bagged CART trees; the probability is the share of trees voting 1."""

    def __init__(self, n_trees=100, max_depth=None, min_leaf=1):
        self.n_trees = int(n_trees)
        self.max_depth = max_depth
        self.min_leaf = int(min_leaf)
        self.trees_: list[Tree] = []
        self._stacked = None

    def fit(self, X, y, seed=0):
        k = math.ceil(math.sqrt(X.shape[1]))
        # word 2t seeds tree t's bootstrap, word 2t+1 its feature draws
        seeds = np.random.SeedSequence([int(seed), 1]).generate_state(2 * self.n_trees)
        grown = K.grow_forest(np.ascontiguousarray(X, dtype=np.float64),
                              np.ascontiguousarray(y, dtype=np.float64), self.n_trees,
                              -1 if self.max_depth is None else int(self.max_depth),
                              self.min_leaf, k, seeds.astype(np.int64))
        self.trees_ = [Tree(*arrays) for arrays in grown]
        self._stacked = None
        return self

    def truncated(self, n_trees: int) -> "RandomForest":
        """The forest a fit with n_trees would have grown: its first n_trees trees."""
        model = RandomForest(n_trees, self.max_depth, self.min_leaf)
        model.trees_ = self.trees_[:n_trees]
        return model

    def votes(self):
        return [(t.value >= 0.5).astype(float) for t in self.trees_]

    def _stack(self):
        if self._stacked is None:
            self._stacked = stack_trees(self.trees_, self.votes())
        return self._stacked

    def predict_proba(self, X):
        feature, threshold, left, right, value, roots = self._stack()
        total = K.forest_apply(feature, threshold, left, right, value, roots,
                               np.ascontiguousarray(X, dtype=np.float64))
        return total / self.n_trees

    def shap_trees(self):
        return self.trees_, self.votes(), np.full(len(self.trees_), 1.0 / len(self.trees_))

    def to_dict(self):
        return {"trees": [t.to_dict() for t in self.trees_]}

    @classmethod
    def from_dict(cls, params, state):
        model = cls(**params)
        model.trees_ = [Tree.from_dict(t) for t in state["trees"]]
        return model


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def deviance(y, margin) -> float:
    """Mean binomial deviance (twice the mean log loss) of logit margins."""
    return float(2.0 * np.mean(np.logaddexp(0.0, margin) - y * margin))


class GradientBoosting:
    """Stagewise boosting of shallow regression trees on the logit scale.

    Each stage fits a tree to the residuals y - p and sets every leaf to one
    Newton step, sum(y - p) / sum(p (1 - p)), shrunk by `shrinkage`.
    """

    def __init__(self, n_stages=100, shrinkage=0.1, depth=3, min_leaf=1):
        self.n_stages = int(n_stages)
        self.shrinkage = float(shrinkage)
        self.depth = int(depth)
        self.min_leaf = int(min_leaf)
        self.init_ = 0.0
        self.trees_: list[Tree] = []
        self.train_deviance_: list[float] = []
        self._stacked = None

    def fit(self, X, y, seed=0):
        # all splits consider every feature, so boosting itself draws no randomness
        prior = np.clip(y.mean(), 1e-12, 1 - 1e-12)
        self.init_ = float(np.log(prior / (1 - prior)))
        grown, dev = K.boost(np.ascontiguousarray(X, dtype=np.float64),
                             np.ascontiguousarray(y, dtype=np.float64), self.n_stages,
                             self.shrinkage, self.depth, self.min_leaf, self.init_)
        self.trees_ = [Tree(*arrays) for arrays in grown]
        self.train_deviance_ = dev.tolist()
        self._stacked = None
        return self

    def truncated(self, n_stages: int) -> "GradientBoosting":
        model = GradientBoosting(n_stages, self.shrinkage, self.depth, self.min_leaf)
        model.init_ = self.init_
        model.trees_ = self.trees_[:n_stages]
        model.train_deviance_ = self.train_deviance_[:n_stages + 1]
        return model

    def _stack(self):
        if self._stacked is None:
            self._stacked = stack_trees(self.trees_)
        return self._stacked

    def decision_function(self, X):
        feature, threshold, left, right, value, roots = self._stack()
        total = K.forest_apply(feature, threshold, left, right, value, roots,
                               np.ascontiguousarray(X, dtype=np.float64))
        return self.init_ + self.shrinkage * total

    def staged_decision_function(self, X):
        margin = np.full(len(X), self.init_)
        yield margin.copy()
        for tree in self.trees_:
            margin = margin + self.shrinkage * tree.apply(X)
            yield margin.copy()

    def predict_proba(self, X):
        return _sigmoid(self.decision_function(X))

    def shap_trees(self):
        return (self.trees_, [t.value for t in self.trees_],
                np.full(len(self.trees_), self.shrinkage))

    def to_dict(self):
        return {"init": self.init_, "trees": [t.to_dict() for t in self.trees_]}

    @classmethod
    def from_dict(cls, params, state):
        model = cls(**params)
        model.init_ = float(state["init"])
        model.trees_ = [Tree.from_dict(t) for t in state["trees"]]
        return model
