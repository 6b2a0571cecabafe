"""Shapley attributions, importance rankings and cross-model trend summaries.

All games use the interventional value function
v(S) = mean_b f(x_S, b_rest) over a background set, with f the model's
probability output.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from .errors import ShapeMismatch, SingularSystemWarning, TooManyFeatures, UnsupportedKind
from .learners import FittedModel, ModelKind
from .learners import _kernels as K
from .learners.trees import stack_trees
from .seeding import rng

MAX_EXACT_FEATURES = 15
DIRECT, INVERSE, NONE = "direct", "inverse", "none"


@dataclass
class Attribution:
    phi: np.ndarray
    base_value: float
    feature_names: list[str]
    method: str = "exact"
    fallback_pairs: int = 0  # GB pairs attributed by margin rescaling

    def to_csv(self) -> str:
        lines = [",".join(self.feature_names)]
        lines += [",".join(repr(float(v)) for v in row) for row in self.phi]
        return "\n".join(lines) + "\n"


def _as_function(model) -> Callable[[np.ndarray], np.ndarray]:
    return model.predict_proba if hasattr(model, "predict_proba") else model


def _masks(d: int) -> np.ndarray:
    """All 2^d coalitions as boolean rows, bit j of the index = feature j."""
    idx = np.arange(2 ** d)[:, None]
    return ((idx >> np.arange(d)) & 1).astype(bool)


def _coalition_values(f, x, background, masks, chunk_rows: int = 200_000) -> np.ndarray:
    """v(S) for every mask row, evaluated in chunks of hybrid rows."""
    m = background.shape[0]
    per_chunk = max(1, chunk_rows // m)
    out = np.empty(len(masks))
    for start in range(0, len(masks), per_chunk):
        block = masks[start:start + per_chunk]
        hybrid = np.where(block[:, None, :], x[None, None, :], background[None, :, :])
        preds = np.asarray(f(hybrid.reshape(-1, x.size)), dtype=float)
        out[start:start + len(block)] = preds.reshape(len(block), m).mean(axis=1)
    return out


def _check_inputs(x, background):
    x = np.asarray(x, dtype=float).ravel()
    background = np.atleast_2d(np.asarray(background, dtype=float))
    if background.shape[0] == 0:
        raise ValueError("background set is empty")
    if background.shape[1] != x.size:
        raise ShapeMismatch(f"x has {x.size} features, background {background.shape[1]}")
    return x, background


def exact_shapley(model, x, background) -> tuple[np.ndarray, float]:
    """Brute-force Shapley values over all 2^d coalitions."""
    x, background = _check_inputs(x, background)
    d = x.size
    if d > MAX_EXACT_FEATURES:
        raise TooManyFeatures(f"exact enumeration limited to {MAX_EXACT_FEATURES} features")
    masks = _masks(d)
    v = _coalition_values(_as_function(model), x, background, masks)
    sizes = masks.sum(axis=1)
    fact = [math.factorial(k) for k in range(d + 1)]
    phi = np.zeros(d)
    for j in range(d):
        without = np.flatnonzero(~masks[:, j])
        s = sizes[without]
        w = np.array([fact[k] * fact[d - k - 1] for k in s], dtype=float) / fact[d]
        phi[j] = np.sum(w * (v[without | (1 << j)] - v[without]))
    return phi, float(v[0])


def _kernel_weight(d: int, s: np.ndarray) -> np.ndarray:
    comb = np.array([math.comb(d, int(k)) for k in s], dtype=float)
    return (d - 1) / (comb * s * (d - s))


def _sample_coalitions(d: int, n: int, seed: int) -> np.ndarray:
    sizes = np.arange(1, d)
    p = (d - 1) / (sizes * (d - sizes))
    gen = rng(seed, 30)
    drawn = gen.choice(sizes, size=n, p=p / p.sum())
    masks = np.zeros((n, d), dtype=bool)
    for row, s in zip(masks, drawn):
        row[gen.choice(d, size=s, replace=False)] = True
    return masks


def kernel_shap(model, x, background, n_coalitions: Optional[int] = None, seed: int = 0,
                ridge: float = 1e-10) -> tuple[np.ndarray, float]:
    """Weighted least squares under the Shapley kernel, efficiency imposed exactly.

    Enumerates every proper coalition when the budget allows, otherwise
    samples coalitions with probability proportional to their kernel mass.
    """
    x, background = _check_inputs(x, background)
    d = x.size
    if d < 2:
        raise ValueError("kernel SHAP needs at least two features")
    full = 2 ** d - 2
    if n_coalitions is not None and int(n_coalitions) < min(2 * d, full):
        raise ValueError(f"need at least {min(2 * d, full)} coalitions")
    n_coalitions = full if n_coalitions is None else int(n_coalitions)
    f = _as_function(model)
    # a feature equal to x in every background row never changes the game
    active = np.flatnonzero(np.any(background != x, axis=0))
    k = active.size
    ends = _coalition_values(f, x, background, np.array([[False] * d, [True] * d]))
    base, fx = ends
    phi = np.zeros(d)
    if k <= 1:
        phi[active] = fx - base
        return phi, float(base)
    full = 2 ** k - 2
    if n_coalitions >= full:
        Z = _masks(k)[1:-1]
        w = _kernel_weight(k, Z.sum(axis=1))
    else:
        Z = _sample_coalitions(k, n_coalitions, seed)
        w = np.ones(len(Z))
    masks = np.ones((len(Z), d), dtype=bool)
    masks[:, active] = Z
    v = _coalition_values(f, x, background, masks)
    # substitute phi_last = (fx - base) - sum(others)
    Zf = Z.astype(float)
    A = Zf[:, :-1] - Zf[:, -1:]
    t = v - base - Zf[:, -1] * (fx - base)
    M = A.T @ (w[:, None] * A)
    rhs = A.T @ (w * t)
    if np.linalg.matrix_rank(M) < M.shape[0]:
        warnings.warn("coalition system is singular; solved with a small ridge",
                      SingularSystemWarning, stacklevel=2)
        M = M + ridge * np.trace(M) / M.shape[0] * np.eye(M.shape[0]) + ridge * np.eye(M.shape[0])
    head = np.linalg.solve(M, rhs)
    phi[active] = np.append(head, (fx - base) - head.sum())
    return phi, float(base)


def tree_shap(model: FittedModel, X, background, max_players: int = 12) -> Attribution:
    """Interventional tree attribution for DT, RF and GB models."""
    kind = ModelKind(model.kind)
    if not kind.is_tree:
        raise UnsupportedKind(f"tree attribution does not apply to {kind.value}")
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    B = np.ascontiguousarray(np.atleast_2d(background), dtype=np.float64)
    if X.shape[1] != model.n_features or B.shape[1] != model.n_features:
        raise ShapeMismatch("explained rows and background must match the model's columns")
    trees, values, weights = model.estimator.shap_trees()
    feature, threshold, left, right, value, roots = stack_trees(trees, values)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    names = [f"x{j}" for j in range(X.shape[1])]
    if kind is ModelKind.GB:
        phi, fallback = K.sigmoid_ensemble_shap(feature, threshold, left, right, value, roots,
                                                weights, model.estimator.init_, X, B,
                                                int(max_players))
    else:
        phi = K.ensemble_shap(feature, threshold, left, right, value, roots, weights, X, B)
        fallback = 0
    base = float(np.mean(model.predict_proba(B)))
    return Attribution(phi, base, names, "tree", int(fallback))


def explain(model: FittedModel, X, background, feature_names: Sequence[str],
            n_coalitions: Optional[int] = None, seed: int = 0,
            max_players: int = 12) -> Attribution:
    """Tree attribution for tree kinds, kernel attribution for LR and MLP."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    B = np.atleast_2d(np.asarray(background, dtype=float))
    if ModelKind(model.kind).is_tree:
        attr = tree_shap(model, X, B, max_players)
        attr.feature_names = list(feature_names)
        return attr
    rows = [kernel_shap(model, x, B, n_coalitions, seed=seed + i)[0] for i, x in enumerate(X)]
    base = float(np.mean(model.predict_proba(B)))
    return Attribution(np.array(rows).reshape(len(X), X.shape[1]), base,
                       list(feature_names), "kernel")


def background_rows(n_rows: int, size: int, seed: int) -> np.ndarray:
    """Sorted indices of a seeded subsample of at most `size` training rows."""
    if n_rows <= size:
        return np.arange(n_rows)
    return np.sort(rng(seed, 40).choice(n_rows, size=size, replace=False))


# ------------------------------------------------------------ summaries

def rank_importance(attribution: Attribution) -> list[tuple[str, float]]:
    """(feature, mean |phi|) in descending order; ties keep column order."""
    phi = np.asarray(attribution.phi)
    if phi.size == 0:
        raise ValueError("empty attribution")
    importance = np.abs(phi).mean(axis=0)
    order = np.argsort(-importance, kind="mergesort")
    return [(attribution.feature_names[j], float(importance[j])) for j in order]


@dataclass(frozen=True)
class BeeswarmPoint:
    feature: str
    phi: float
    color: float  # min-max normalized feature value


def beeswarm_data(attribution: Attribution, X) -> list[BeeswarmPoint]:
    X = np.asarray(X, dtype=float)
    if X.shape != attribution.phi.shape:
        raise ShapeMismatch(f"X {X.shape} vs phi {attribution.phi.shape}")
    points = []
    for name, _ in rank_importance(attribution):
        j = attribution.feature_names.index(name)
        col = X[:, j]
        span = col.max() - col.min()
        color = (col - col.min()) / span if span > 0 else np.zeros_like(col)
        points.extend(BeeswarmPoint(name, float(p), float(c))
                      for p, c in zip(attribution.phi[:, j], color))
    return points


def trend_direction(attribution: Attribution, X, threshold: float = 0.3) -> dict[str, str]:
    """Sign of the Spearman correlation between a feature and its phi column."""
    X = np.asarray(X, dtype=float)
    if X.shape != attribution.phi.shape:
        raise ShapeMismatch(f"X {X.shape} vs phi {attribution.phi.shape}")
    out = {}
    for j, name in enumerate(attribution.feature_names):
        col, phi = X[:, j], attribution.phi[:, j]
        if np.ptp(col) == 0 or np.ptp(phi) == 0:
            out[name] = NONE
            continue
        rho = spearmanr(col, phi).statistic
        out[name] = DIRECT if rho >= threshold else INVERSE if rho <= -threshold else NONE
    return out


@dataclass(frozen=True)
class TrendCell:
    model: str
    feature: str
    rank: int
    impact_weight: float
    direction: str


@dataclass
class TrendSummary:
    cells: list[TrendCell]
    features: list[str]
    models: list[str]
    top_k: int = 5

    def cell(self, model: str, feature: str) -> Optional[TrendCell]:
        for c in self.cells:
            if c.model == model and c.feature == feature:
                return c
        return None

    def top_features(self) -> list[tuple[str, float]]:
        """Features by total impact weight across models, top_k of them."""
        totals = {f: 0.0 for f in self.features}
        for c in self.cells:
            totals[c.feature] += c.impact_weight
        ranked = sorted(self.features, key=lambda f: (-totals[f], self.features.index(f)))
        return [(f, totals[f]) for f in ranked[: self.top_k]]

    def directions(self, feature: str) -> dict[str, str]:
        return {c.model: c.direction for c in self.cells if c.feature == feature}

    def to_dict(self) -> dict:
        return {
            "models": self.models,
            "features": self.features,
            "top_k": self.top_k,
            "cells": [c.__dict__ for c in self.cells],
            "top_features": [{"feature": f, "impact_weight": w} for f, w in self.top_features()],
        }


def weighted_cross_model_summary(rankings: dict[str, list[tuple[str, float]]],
                                 f1: dict[str, float],
                                 trends: dict[str, dict[str, str]],
                                 features: Optional[Sequence[str]] = None,
                                 top_k: int = 5) -> TrendSummary:
    """One cell per (model, present feature): (top_k + 1 - rank) * F1 inside
    the top-k window, else 0."""
    models = list(rankings)
    if features is None:
        features = []
        for ranking in rankings.values():
            features.extend(name for name, _ in ranking if name not in features)
    cells = []
    for model in models:
        for rank, (name, _) in enumerate(rankings[model], start=1):
            score = (top_k + 1 - rank) if rank <= top_k else 0
            cells.append(TrendCell(model, name, rank, float(score * f1[model]),
                                   trends[model].get(name, NONE)))
    order = {f: i for i, f in enumerate(features)}
    cells.sort(key=lambda c: (models.index(c.model), order.get(c.feature, len(order))))
    return TrendSummary(cells, list(features), models, top_k)
