"""The five classifier families behind one fit / predict_proba interface."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np

from ..errors import NonFiniteFeature, SchemaMismatch, SingleClassTraining
from .linear import LogisticRegression
from .mlp import MLP
from .trees import DecisionTree, GradientBoosting, RandomForest

FORMAT_VERSION = 1


class ModelKind(str, Enum):
    LR = "LR"
    DT = "DT"
    RF = "RF"
    GB = "GB"
    MLP = "MLP"

    @property
    def needs_scaling(self) -> bool:
        return self in (ModelKind.LR, ModelKind.MLP)

    @property
    def is_tree(self) -> bool:
        return self in (ModelKind.DT, ModelKind.RF, ModelKind.GB)


_ESTIMATORS = {
    ModelKind.LR: LogisticRegression,
    ModelKind.DT: DecisionTree,
    ModelKind.RF: RandomForest,
    ModelKind.GB: GradientBoosting,
    ModelKind.MLP: MLP,
}

# parameter lists in canonical grid order
DEFAULT_GRIDS: dict[ModelKind, dict[str, list]] = {
    ModelKind.LR: {"l2": [0.001, 0.01, 0.1, 1.0]},
    ModelKind.DT: {"max_depth": [2, 3, 4, 6, 8], "min_leaf": [1, 5, 10]},
    ModelKind.RF: {"n_trees": [100, 300], "max_depth": [4, 8, None], "min_leaf": [1, 5]},
    ModelKind.GB: {"n_stages": [100, 300], "shrinkage": [0.05, 0.1], "depth": [2, 3]},
    ModelKind.MLP: {"hidden": [(16,), (32,), (32, 16)], "lr": [0.01, 0.001], "epochs": [500]},
}


def _positive_int(v):
    return isinstance(v, (int, np.integer)) and v > 0


_ADMISSIBLE = {
    "l2": lambda v: v >= 0,
    "max_depth": lambda v: v is None or _positive_int(v),
    "min_leaf": _positive_int,
    "n_trees": _positive_int,
    "n_stages": _positive_int,
    "shrinkage": lambda v: 0 < v <= 1,
    "depth": _positive_int,
    "hidden": lambda v: len(v) > 0 and all(_positive_int(h) for h in v),
    "lr": lambda v: v > 0,
    "epochs": _positive_int,
    "batch_size": _positive_int,
}


def normalize_params(kind: ModelKind, params: dict) -> dict:
    """Validate against the kind's schema; lists become tuples for hashing."""
    kind = ModelKind(kind)
    allowed = set(DEFAULT_GRIDS[kind]) | ({"batch_size"} if kind is ModelKind.MLP else set()) \
        | ({"min_leaf"} if kind is ModelKind.GB else set())
    out = {}
    for key, value in params.items():
        if key not in allowed:
            raise ValueError(f"{kind.value} has no hyperparameter {key!r}")
        if isinstance(value, list):
            value = tuple(value)
        if not _ADMISSIBLE[key](value):
            raise ValueError(f"{kind.value}: {key}={value!r} is out of range")
        out[key] = value
    return out


def expand_grid(kind: ModelKind, grid: Optional[dict] = None) -> list[dict]:
    """All grid cells, in canonical order (first key varies slowest)."""
    grid = DEFAULT_GRIDS[ModelKind(kind)] if grid is None else grid
    keys = list(grid)
    return [normalize_params(kind, dict(zip(keys, combo)))
            for combo in itertools.product(*(grid[k] for k in keys))]


def params_key(params: dict) -> str:
    return json.dumps({k: list(v) if isinstance(v, tuple) else v
                       for k, v in sorted(params.items())}, sort_keys=True)


@dataclass(frozen=True)
class StandardizerStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def estimate(cls, X) -> "StandardizerStats":
        return cls(X.mean(axis=0), X.std(axis=0))

    @property
    def constant(self) -> np.ndarray:
        return ~(self.std > 0)

    def transform(self, X):
        # constant features are centered but not scaled
        scale = np.where(self.constant, 1.0, self.std)
        return (X - self.mean) / scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.asarray(data["mean"], float), np.asarray(data["std"], float))


@dataclass
class FittedModel:
    kind: ModelKind
    params: dict
    estimator: Any = field(repr=False)
    n_features: int
    seed: int
    standardizer: Optional[StandardizerStats] = None

    def prepare(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise SchemaMismatch(f"expected {self.n_features} columns, got shape {X.shape}")
        return self.standardizer.transform(X) if self.standardizer is not None else X

    def predict_proba(self, X) -> np.ndarray:
        return np.clip(self.estimator.predict_proba(self.prepare(X)), 0.0, 1.0)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind.value,
            "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()},
            "n_features": self.n_features,
            "seed": self.seed,
            "standardizer": None if self.standardizer is None else self.standardizer.to_dict(),
            "state": self.estimator.to_dict(),
        }

    @classmethod
    def from_dict(cls, data) -> "FittedModel":
        kind = ModelKind(data["kind"])
        params = normalize_params(kind, data["params"])
        est = _ESTIMATORS[kind].from_dict(params, data["state"])
        std = data.get("standardizer")
        return cls(kind, params, est, int(data["n_features"]), int(data["seed"]),
                   None if std is None else StandardizerStats.from_dict(std))


def fit(kind, params, X, y, seed: int) -> FittedModel:
    """Train one model; deterministic in (X, y, params, seed)."""
    kind = ModelKind(kind)
    params = normalize_params(kind, params)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise NonFiniteFeature("feature matrix contains NaN or infinity")
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise SingleClassTraining("training labels need both classes")
    std = StandardizerStats.estimate(X) if kind.needs_scaling else None
    Xs = std.transform(X) if std is not None else X
    est = _ESTIMATORS[kind](**params)
    if kind is ModelKind.LR:
        est.fit(Xs, y)
    else:
        est.fit(Xs, y, seed=seed)
    return FittedModel(kind, params, est, X.shape[1], int(seed), std)


# ensemble size parameter whose smaller values are prefixes of larger fits
PREFIX_PARAM = {ModelKind.RF: "n_trees", ModelKind.GB: "n_stages"}


def fit_cells(kind, cells, X, y, seed: int) -> list[FittedModel]:
    """fit() for every cell, sharing one fit among cells that differ only
    in ensemble size. Results equal separate fits exactly."""
    kind = ModelKind(kind)
    cells = [normalize_params(kind, c) for c in cells]
    size_key = PREFIX_PARAM.get(kind)
    if size_key is None:
        return [fit(kind, c, X, y, seed) for c in cells]
    groups: dict = {}
    for i, cell in enumerate(cells):
        rest = params_key({k: v for k, v in cell.items() if k != size_key})
        groups.setdefault(rest, []).append(i)
    out: list = [None] * len(cells)
    for members in groups.values():
        largest = max(members, key=lambda i: cells[i].get(size_key, 100))
        full = fit(kind, cells[largest], X, y, seed)
        for i in members:
            size = cells[i].get(size_key, 100)
            out[i] = FittedModel(kind, cells[i], full.estimator.truncated(size), full.n_features,
                                 full.seed, full.standardizer)
    return out


def predict_proba(model: FittedModel, X) -> np.ndarray:
    return model.predict_proba(X)


def predict(model: FittedModel, X, threshold: float = 0.5) -> np.ndarray:
    return (model.predict_proba(X) >= threshold).astype(int)


def save_model(model: FittedModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path) -> FittedModel:
    with open(path) as fh:
        return FittedModel.from_dict(json.load(fh))


__all__ = [
    "ModelKind", "DEFAULT_GRIDS", "StandardizerStats", "FittedModel", "fit", "predict",
    "predict_proba", "fit_cells", "expand_grid", "normalize_params", "params_key", "save_model",
    "load_model",
]
