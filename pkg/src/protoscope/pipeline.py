"""End-to-end stages shared by the CLI and the acceptance harness.

Each stage is a pure function of its inputs and a seed; the CLI adds file
reading and writing around them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .dataset import (CorrelationThresholds, FeatureTable, SplitIndices, assemble_table,
                      cohort_key, cohort_name, group_series, is_eligible, reduce_correlated,
                      select_slice, stratified_split)
from .dicom import MetaRecord, PixelSlab, extract_pixels, extract_record, parse_file, scrub_phi
from .errors import EmptyAfterFiltering, ProtoscopeError
from .evaluation import (CVResult, FinalSelection, METRIC_NAMES, MetricSet, evaluate_holdout,
                         nested_cv, select_final)
from .explain import (Attribution, TrendSummary, background_rows, explain, rank_importance,
                      trend_direction, weighted_cross_model_summary)
from .learners import FittedModel, ModelKind, fit
from .quality import combine_and_label, compute_metrics

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


# ----------------------------------------------------------------- ingest

@dataclass
class IngestedImage:
    path: str
    record: MetaRecord
    pixels: PixelSlab


def ingest_bytes(data: bytes, salt: str = "protoscope") -> tuple[MetaRecord, PixelSlab]:
    """Parse, scrub identifiers, then extract the record and pixels."""
    elements = scrub_phi(parse_file(data), salt)
    return extract_record(elements), extract_pixels(elements)


def ingest_dir(root, salt: str = "protoscope") -> tuple[list[IngestedImage], list[dict]]:
    """Every regular file under root, in sorted path order; failures are
    collected instead of raised."""
    root = Path(root)
    images, errors = [], []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        rel = path.relative_to(root).as_posix()
        try:
            record, pixels = ingest_bytes(path.read_bytes(), salt)
        except (ProtoscopeError, OSError) as exc:
            log.warning("skipping %s: %s", rel, exc)
            errors.append({"path": rel, "error": type(exc).__name__, "message": str(exc)})
            continue
        images.append(IngestedImage(rel, record, pixels))
    return images, errors


# ------------------------------------------------------------------ build

@dataclass
class BuildResult:
    table: FeatureTable
    full_table: FeatureTable
    split: SplitIndices
    removals: list[dict]
    cohort: tuple
    cohort_sizes: dict[str, int]
    small_cohort: bool

    def manifest(self, config: RunConfig) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "cohort": cohort_name(self.cohort),
            "cohort_key": list(self.cohort),
            "cohort_sizes": self.cohort_sizes,
            "rows": len(self.table),
            "dropped_missing": self.full_table.dropped,
            "columns": [{"name": c.name, "group": c.group, "encoding": c.encoding}
                        for c in self.table.columns],
            "removal_log": self.removals,
            "seed": self.split.seed,
            "split": self.split.to_dict(),
            "n_train": int(self.split.train.size),
            "n_test": int(self.split.test.size),
            "min_cohort_size": config.min_cohort_size,
            "small_cohort_warning": self.small_cohort,
            "thresholds": {"both": config.corr_both, "single": config.corr_single},
        }


def _choose_cohort(cohorts: dict, wanted: str):
    eligible = {k: v for k, v in cohorts.items() if is_eligible(k)}
    if wanted != "auto":
        for key in cohorts:
            if cohort_name(key) == wanted:
                return key
        raise EmptyAfterFiltering(f"no cohort named {wanted!r}")
    if not eligible:
        raise EmptyAfterFiltering("no sagittal T1/T2 cohort found")
    return max(sorted(eligible, key=cohort_name), key=lambda k: len(eligible[k]))


def build_dataset(images: Sequence[IngestedImage], config: RunConfig, seed: int) -> BuildResult:
    """Cohort choice, slice selection, quality labels, features, reduction, split."""
    pixels_of = {id(img.record): img.pixels for img in images}
    cohorts = group_series(img.record for img in images)
    key = _choose_cohort(cohorts, config.cohort)
    by_series: dict = {}
    for record in cohorts[key]:
        by_series.setdefault((record.study_id, record.series_id), []).append(record)
    selected = [select_slice(by_series[k]) for k in sorted(by_series)]
    labels = combine_and_label([compute_metrics(pixels_of[id(r)]) for r in selected],
                               config.quality_weights)
    full = assemble_table(selected, labels)
    reduced, removals = reduce_correlated(
        full, CorrelationThresholds(config.corr_both, config.corr_single))
    split = stratified_split(reduced.labels, config.test_fraction, seed)
    sizes = {cohort_name(k): len(v) for k, v in sorted(cohorts.items(), key=lambda kv: cohort_name(kv[0]))}
    small = len(reduced) < config.min_cohort_size
    if small:
        log.warning("cohort %s has %d rows, below the %d-row minimum", cohort_name(key),
                    len(reduced), config.min_cohort_size)
    return BuildResult(reduced, full, split, removals, key, sizes, small)


# ------------------------------------------------------------------ train

@dataclass
class ModelReport:
    kind: ModelKind
    cv: CVResult
    final: FinalSelection
    model: FittedModel
    holdout: MetricSet


def train_models(table: FeatureTable, split: SplitIndices, config: RunConfig,
                 seed: int) -> dict[str, ModelReport]:
    """Nested CV on the training part, final refit, then one holdout score."""
    X_train, y_train = table.X[split.train], table.labels[split.train]
    X_test, y_test = table.X[split.test], table.labels[split.test]
    reports = {}
    for kind in config.models:
        kind = ModelKind(kind)
        cv = nested_cv(kind, config.grid(kind), X_train, y_train, 10, 3, seed,
                       n_jobs=config.n_jobs)
        final = select_final(cv)
        model = fit(kind, final.params, X_train, y_train, seed)
        reports[kind.value] = ModelReport(kind, cv, final, model,
                                          evaluate_holdout(model, X_test, y_test))
    return reports


def evaluation_document(reports: dict[str, ModelReport], table: FeatureTable, seed: int) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "features": table.names,
        "models": {
            kind: {
                "ncv": r.cv.to_dict(),
                "final_params": {k: list(v) if isinstance(v, tuple) else v
                                 for k, v in r.final.params.items()},
                "selection_rationale": r.final.rationale,
                "holdout": r.holdout.as_dict(),
            } for kind, r in reports.items()
        },
    }


TABLE_HEADERS = ("Model", "Accuracy", "Precision", "Recall", "F1-score", "AUC-ROC", "AUC-PR")


def render_table(evaluation: dict) -> list[list[str]]:
    """Rows of the cross-validation table, each cell "mean ± std"."""
    rows = [list(TABLE_HEADERS)]
    for kind, block in evaluation["models"].items():
        stats = block["ncv"]["mean_std"]
        rows.append([kind] + [stats[m]["text"] for m in METRIC_NAMES])
    return rows


# ---------------------------------------------------------------- explain

@dataclass
class ExplainResult:
    attributions: dict[str, Attribution]
    explained_rows: np.ndarray
    rankings: dict[str, list]
    trends: dict[str, dict]
    summary: TrendSummary
    background: np.ndarray = field(repr=False, default=None)

    def document(self, all_features: Sequence[str]) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "direction_rule": "spearman(feature, phi) >= +t direct, <= -t inverse, else none",
            "feature_universe": list(all_features),
            "rankings": {k: [{"feature": f, "mean_abs_phi": v} for f, v in r]
                         for k, r in self.rankings.items()},
            "trends": self.trends,
            "base_values": {k: a.base_value for k, a in self.attributions.items()},
            "fallback_pairs": {k: a.fallback_pairs for k, a in self.attributions.items()},
            "summary": self.summary.to_dict(),
        }


def explain_models(table: FeatureTable, split: SplitIndices, models: dict[str, FittedModel],
                   f1: dict[str, float], config: RunConfig, seed: int,
                   feature_universe: Optional[Sequence[str]] = None) -> ExplainResult:
    """Attribute every model on the holdout rows against a training background."""
    X_train = table.X[split.train]
    background = X_train[background_rows(len(X_train), config.background_size, seed)]
    X_explain = table.X[split.test]
    attributions, rankings, trends = {}, {}, {}
    for kind, model in models.items():
        attr = explain(model, X_explain, background, table.names, config.n_coalitions,
                       seed, config.max_players)
        attributions[kind] = attr
        rankings[kind] = rank_importance(attr)
        trends[kind] = trend_direction(attr, X_explain, config.trend_threshold)
    universe = list(feature_universe) if feature_universe is not None else table.names
    summary = weighted_cross_model_summary(rankings, f1, trends, universe, config.top_k)
    return ExplainResult(attributions, X_explain, rankings, trends, summary, background)


# ------------------------------------------------------------- full runs

@dataclass
class RunResult:
    build: BuildResult
    reports: dict[str, ModelReport]
    explanation: Optional[ExplainResult]

    def holdout_f1(self) -> dict[str, float]:
        return {k: r.holdout.f1 for k, r in self.reports.items()}


def images_from_cohort(records, slabs, salt: str = "protoscope") -> list[IngestedImage]:
    """Round-trip synthetic records through DICOM bytes, as ingest would."""
    from .dicom import write_file
    out = []
    for i, (record, pixels) in enumerate(zip(records, slabs)):
        rec, pix = ingest_bytes(write_file(record, pixels), salt)
        out.append(IngestedImage(f"{i:05d}.dcm", rec, pix))
    return out


def run_all(images: Sequence[IngestedImage], config: RunConfig, seed: int,
            with_explanations: bool = True) -> RunResult:
    built = build_dataset(images, config, seed)
    reports = train_models(built.table, built.split, config, seed)
    explanation = None
    if with_explanations:
        explanation = explain_models(
            built.table, built.split, {k: r.model for k, r in reports.items()},
            {k: r.holdout.f1 for k, r in reports.items()}, config, seed,
            built.full_table.names)
    return RunResult(built, reports, explanation)
