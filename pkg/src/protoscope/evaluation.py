"""Classification metrics, stratified folds and nested cross-validation."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import rankdata

from .errors import LengthMismatch, NoPositives, SingleClass, TooFewPerClass
from .learners import ModelKind, expand_grid, fit, fit_cells, params_key, predict
from .seeding import rng

METRIC_NAMES = ("accuracy", "precision", "recall", "f1", "auc_roc", "auc_pr")


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc_roc: float
    auc_pr: float

    def as_dict(self) -> dict:
        return asdict(self)


def _binary_pair(y_true, other):
    y_true = np.asarray(y_true).astype(int).ravel()
    other = np.asarray(other).ravel()
    if y_true.shape != other.shape:
        raise LengthMismatch(f"{y_true.size} labels vs {other.size} values")
    return y_true, other


def confusion_metrics(y_true, y_pred) -> tuple[float, float, float, float]:
    """Accuracy, precision, recall, F1; a 0/0 ratio counts as 0."""
    y_true, y_pred = _binary_pair(y_true, y_pred)
    y_pred = y_pred.astype(int)
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    accuracy = float(np.mean(y_true == y_pred)) if y_true.size else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return accuracy, precision, recall, f1


def auc_roc(y_true, scores) -> float:
    """Mann-Whitney U / (n_pos * n_neg); tied scores earn half credit."""
    y_true, scores = _binary_pair(y_true, scores)
    n_pos = int(y_true.sum())
    n_neg = y_true.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC-ROC needs both classes")
    ranks = rankdata(scores)
    u = ranks[y_true == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(y_true, scores) -> float:
    """Average precision: sum of (R_k - R_{k-1}) * P_k over descending
    distinct score thresholds."""
    y_true, scores = _binary_pair(y_true, scores)
    n_pos = int(y_true.sum())
    if n_pos == 0:
        raise NoPositives("AUC-PR needs at least one positive")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], y_true[order]
    # last index of each block of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[ends]
    precision = tp / (ends + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def metric_set(y_true, proba, threshold: float = 0.5) -> MetricSet:
    y_pred = (np.asarray(proba) >= threshold).astype(int)
    acc, prec, rec, f1 = confusion_metrics(y_true, y_pred)
    return MetricSet(acc, prec, rec, f1, auc_roc(y_true, proba), auc_pr(y_true, proba))


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.2f}"


# ------------------------------------------------------------------ folds

def stratified_folds(y, k: int, seed: int) -> np.ndarray:
    """Fold id per row: seeded shuffle inside each class, then round-robin."""
    y = np.asarray(y).astype(int)
    folds = np.empty(y.size, dtype=int)
    position = 0
    for cls in (0, 1):
        members = np.flatnonzero(y == cls)
        members = members[rng(seed, 10, cls).permutation(members.size)]
        folds[members] = (position + np.arange(members.size)) % k
        position += members.size
    return folds


def _check_per_class(y, k):
    counts = np.bincount(np.asarray(y).astype(int), minlength=2)
    if counts.min() < k:
        raise TooFewPerClass(f"class counts {counts.tolist()} cannot fill {k} folds")


# ------------------------------------------------------------ grid search

@dataclass
class GridSearchResult:
    best_params: dict
    cells: list[dict]
    mean_f1: list[float]
    fold_f1: list[list[float]]

    def score_of(self, params: dict) -> float:
        key = params_key(params)
        for cell, score in zip(self.cells, self.mean_f1):
            if params_key(cell) == key:
                return score
        raise KeyError(key)


def grid_scores(kind, grid, X, y, k: int = 3, seed: int = 0) -> GridSearchResult:
    """Mean F1 of every grid cell over k stratified folds of (X, y)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    _check_per_class(y, k)
    cells = expand_grid(kind, grid)
    folds = stratified_folds(y, k, seed)
    fold_f1 = [[0.0] * k for _ in cells]
    for f in range(k):
        train, valid = folds != f, folds == f
        for c, model in enumerate(fit_cells(kind, cells, X[train], y[train], seed)):
            fold_f1[c][f] = confusion_metrics(y[valid], predict(model, X[valid]))[3]
    mean_f1 = [float(np.mean(s)) for s in fold_f1]
    # first maximal cell in canonical order
    best = int(np.argmax(mean_f1))
    return GridSearchResult(cells[best], cells, mean_f1, fold_f1)


def grid_search_inner(kind, grid, X, y, k: int = 3, seed: int = 0) -> dict:
    return grid_scores(kind, grid, X, y, k, seed).best_params


# ------------------------------------------------------------- nested CV

@dataclass
class CVResult:
    kind: str
    per_fold: list[MetricSet]
    chosen: list[dict]
    inner: list[GridSearchResult] = field(repr=False)

    @property
    def mean(self) -> dict:
        return {m: float(np.mean([getattr(f, m) for f in self.per_fold])) for m in METRIC_NAMES}

    @property
    def std(self) -> dict:
        return {m: float(np.std([getattr(f, m) for f in self.per_fold], ddof=1))
                for m in METRIC_NAMES}

    def mean_std_strings(self) -> dict:
        mean, std = self.mean, self.std
        return {m: format_mean_std(mean[m], std[m]) for m in METRIC_NAMES}

    def to_dict(self) -> dict:
        return {
            "per_fold": [f.as_dict() for f in self.per_fold],
            "chosen_params": [_jsonable(p) for p in self.chosen],
            "inner_best_f1": [g.score_of(p) for g, p in zip(self.inner, self.chosen)],
            "mean_std": {m: {"mean": self.mean[m], "std": self.std[m],
                             "text": self.mean_std_strings()[m]} for m in METRIC_NAMES},
        }


def _jsonable(params: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def _outer_fold(kind, grid, X, y, folds, f, inner, seed):
    train, valid = folds != f, folds == f
    search = grid_scores(kind, grid, X[train], y[train], inner, seed + 1 + f)
    model = fit(kind, search.best_params, X[train], y[train], seed)
    return metric_set(y[valid], model.predict_proba(X[valid])), search


def nested_cv(kind, grid, X, y, outer: int = 10, inner: int = 3, seed: int = 0,
              n_jobs: int = 1) -> CVResult:
    """Outer stratified folds; each picks hyperparameters by an inner grid
    search on its training part and is scored on its held-out part.

    Folds may run in parallel (n_jobs != 1); every fold draws only from
    its own seeds, so the result does not depend on the schedule.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    _check_per_class(y, outer)
    folds = stratified_folds(y, outer, seed)
    if n_jobs == 1:
        results = [_outer_fold(kind, grid, X, y, folds, f, inner, seed) for f in range(outer)]
    else:
        results = Parallel(n_jobs=n_jobs)(
            delayed(_outer_fold)(kind, grid, X, y, folds, f, inner, seed) for f in range(outer))
    per_fold = [r[0] for r in results]
    inner_results = [r[1] for r in results]
    chosen = [g.best_params for g in inner_results]
    return CVResult(ModelKind(kind).value, per_fold, chosen, inner_results)


@dataclass(frozen=True)
class FinalSelection:
    params: dict
    rationale: str  # "modal_config" | "best_mean_inner_f1"


def select_final(result: CVResult) -> FinalSelection:
    """Majority config across outer folds, else best mean inner F1."""
    if not result.chosen:
        raise ValueError("empty CV result")
    keys = [params_key(p) for p in result.chosen]
    by_key = {params_key(p): p for p in result.chosen}
    key, count = Counter(keys).most_common(1)[0]
    if count * 2 > len(keys):
        return FinalSelection(by_key[key], "modal_config")
    cells = result.inner[0].cells
    candidates = [c for c in cells if params_key(c) in by_key]
    means = [float(np.mean([g.score_of(c) for g in result.inner])) for c in candidates]
    return FinalSelection(candidates[int(np.argmax(means))], "best_mean_inner_f1")


def evaluate_holdout(model, X_test, y_test) -> MetricSet:
    return metric_set(y_test, model.predict_proba(X_test))
