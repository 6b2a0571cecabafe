"""Cohort grouping, slice selection, feature table assembly and splitting."""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .dicom import MetaRecord
from .errors import EmptyAfterFiltering, SingleClassInput
from .quality import QualityLabel
from .seeding import rng

COMMONLY_MODIFIED = "commonly_modified"
RANDOMLY_MODIFIED = "randomly_modified"


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    group: str
    encoding: str = "numeric"  # or "categorical_onehot"
    source: str = ""


# canonical column order
FEATURES: tuple[FeatureSpec, ...] = (
    FeatureSpec("tr_ms", COMMONLY_MODIFIED, source="tr_ms"),
    FeatureSpec("te_ms", COMMONLY_MODIFIED, source="te_ms"),
    FeatureSpec("nex", COMMONLY_MODIFIED, source="nex"),
    FeatureSpec("percent_sampling", COMMONLY_MODIFIED, source="percent_sampling"),
    FeatureSpec("percent_phase_fov", COMMONLY_MODIFIED, source="percent_phase_fov"),
    FeatureSpec("fov_mm", COMMONLY_MODIFIED, source="fov_mm"),
    FeatureSpec("slice_thickness_mm", COMMONLY_MODIFIED, source="slice_thickness_mm"),
    FeatureSpec("slice_location_mm", RANDOMLY_MODIFIED, source="slice_location_mm"),
    FeatureSpec("age_years", RANDOMLY_MODIFIED, source="age_years"),
    FeatureSpec("weight_kg", RANDOMLY_MODIFIED, source="weight_kg"),
    FeatureSpec("sex_F", RANDOMLY_MODIFIED, "categorical_onehot", "sex"),
    FeatureSpec("sex_M", RANDOMLY_MODIFIED, "categorical_onehot", "sex"),
)

CohortKey = tuple  # (body_part, weighting, coil, plane)


@dataclass
class FeatureTable:
    columns: list[FeatureSpec]
    X: np.ndarray
    labels: np.ndarray
    scores: np.ndarray
    provenance: list[tuple[str, str]]
    dropped: int = 0

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, rows) -> "FeatureTable":
        rows = np.asarray(rows)
        return FeatureTable(list(self.columns), self.X[rows], self.labels[rows],
                            self.scores[rows], [self.provenance[i] for i in rows], self.dropped)

    def select_columns(self, names: Sequence[str]) -> "FeatureTable":
        idx = [self.names.index(n) for n in names]
        return FeatureTable([self.columns[i] for i in idx], self.X[:, idx], self.labels,
                            self.scores, list(self.provenance), self.dropped)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["study_id", "series_id", *self.names, "score", "label"])
        for prov, row, score, label in zip(self.provenance, self.X, self.scores, self.labels):
            writer.writerow([*prov, *(repr(float(v)) for v in row), repr(float(score)), int(label)])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str, groups: Optional[dict] = None) -> "FeatureTable":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        names = header[2:-2]
        known = {f.name: f for f in FEATURES}
        columns = []
        for name in names:
            spec = known.get(name, FeatureSpec(name, COMMONLY_MODIFIED))
            if groups and name in groups:
                spec = FeatureSpec(name, groups[name], spec.encoding, spec.source)
            columns.append(spec)
        X = np.array([[float(v) for v in r[2:-2]] for r in body], dtype=float).reshape(len(body), len(names))
        return cls(columns, X, np.array([int(r[-1]) for r in body], dtype=int),
                   np.array([float(r[-2]) for r in body]), [(r[0], r[1]) for r in body])


# ------------------------------------------------------------- grouping

def cohort_key(record: MetaRecord) -> CohortKey:
    return (record.body_part, record.weighting, record.coil, record.plane)


def group_series(records: Iterable[MetaRecord]) -> dict[CohortKey, list[MetaRecord]]:
    cohorts: dict = defaultdict(list)
    for record in records:
        cohorts[cohort_key(record)].append(record)
    return dict(cohorts)


def is_eligible(key: CohortKey) -> bool:
    """Only sagittal T1/T2 cohorts enter modelling."""
    return key[3] == "sagittal" and key[1] in ("T1", "T2")


def cohort_name(key: CohortKey) -> str:
    return "-".join(str(part) for part in key)


def select_slice(series: Sequence[MetaRecord]) -> MetaRecord:
    """Median instance number; the lower middle for even counts."""
    if not series:
        raise ValueError("empty series")
    ordered = sorted(series, key=lambda r: (r.instance_number is None, r.instance_number or 0))
    return ordered[(len(ordered) - 1) // 2]


def select_slices(records: Iterable[MetaRecord]) -> list[MetaRecord]:
    by_series: dict = defaultdict(list)
    for record in records:
        by_series[(record.study_id, record.series_id)].append(record)
    return [select_slice(by_series[k]) for k in sorted(by_series)]


# --------------------------------------------------------------- assembly

def _feature_value(record: MetaRecord, spec: FeatureSpec) -> Optional[float]:
    if spec.encoding == "categorical_onehot":
        return 1.0 if record.sex == spec.name.split("_", 1)[1] else 0.0
    value = getattr(record, spec.source)
    return None if value is None else float(value)


def assemble_table(records: Sequence[MetaRecord], labels: Sequence[QualityLabel],
                   features: Sequence[FeatureSpec] = FEATURES) -> FeatureTable:
    """Encode records into a numeric matrix; rows missing any feature are dropped."""
    if len(records) != len(labels):
        raise ValueError(f"{len(records)} records but {len(labels)} labels")
    rows, kept_labels, scores, prov = [], [], [], []
    dropped = 0
    for record, label in zip(records, labels):
        values = [_feature_value(record, spec) for spec in features]
        if any(v is None or not math.isfinite(v) for v in values):
            dropped += 1
            continue
        rows.append(values)
        kept_labels.append(label.label)
        scores.append(label.score)
        prov.append((record.study_id, record.series_id))
    if not rows:
        raise EmptyAfterFiltering(f"all {dropped} rows had missing features")
    return FeatureTable(list(features), np.array(rows, dtype=float),
                        np.array(kept_labels, dtype=int), np.array(scores, dtype=float),
                        prov, dropped)


# ------------------------------------------------------------ reduction

@dataclass(frozen=True)
class CorrelationThresholds:
    both: float = 0.7
    single: float = 0.9


def spearman_matrix(X) -> np.ndarray:
    """Spearman correlation with average ranks for ties; constant columns give 0."""
    return pearson_matrix(np.apply_along_axis(rankdata, 0, X))


def pearson_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    centered = X - X.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    safe = np.where(norms > 0, norms, 1.0)
    corr = (centered.T @ centered) / np.outer(safe, safe)
    corr[norms == 0, :] = 0.0
    corr[:, norms == 0] = 0.0
    return np.clip(corr, -1.0, 1.0)


def flagged(p: float, s: float, thresholds: CorrelationThresholds) -> bool:
    p, s = abs(p), abs(s)
    return (p > thresholds.both and s > thresholds.both) or p > thresholds.single \
        or s > thresholds.single


def reduce_correlated(table: FeatureTable, thresholds: CorrelationThresholds = CorrelationThresholds()):
    """Drop one column of each strongly correlated pair until none remain.

    The strongest flagged pair goes first. Within a pair a commonly
    modified column beats a randomly modified one, then the earlier
    column wins.
    """
    if len(table) < 3:
        raise ValueError("need at least 3 rows to estimate correlations")
    log = []
    current = table
    while True:
        P, S = pearson_matrix(current.X), spearman_matrix(current.X)
        d = P.shape[0]
        best = None
        for i in range(d):
            for j in range(i + 1, d):
                if flagged(P[i, j], S[i, j], thresholds):
                    strength = max(abs(P[i, j]), abs(S[i, j]))
                    if best is None or strength > best[0]:
                        best = (strength, i, j)
        if best is None:
            return current, log
        _, i, j = best
        a, b = current.columns[i], current.columns[j]
        drop = i if (a.group == RANDOMLY_MODIFIED and b.group == COMMONLY_MODIFIED) else j
        keep = j if drop == i else i
        log.append({"removed": current.columns[drop].name, "kept": current.columns[keep].name,
                    "pearson": float(P[i, j]), "spearman": float(S[i, j])})
        current = current.select_columns([n for k, n in enumerate(current.names) if k != drop])


# ---------------------------------------------------------------- split

@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    test: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {"train": self.train.tolist(), "test": self.test.tolist(), "seed": self.seed}


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(labels, test_fraction: float = 0.2, seed: int = 0) -> SplitIndices:
    """Seeded per-class holdout; class test counts by largest remainder."""
    y = np.asarray(labels.labels if isinstance(labels, FeatureTable) else labels).astype(int)
    counts = np.bincount(y, minlength=2)
    if np.count_nonzero(counts) < 2:
        raise SingleClassInput("stratified split needs both classes")
    n_test = _round_half_up(test_fraction * y.size)
    ideal = test_fraction * counts
    per_class = np.floor(ideal).astype(int)
    remainder = ideal - per_class
    for cls in np.argsort(-remainder, kind="mergesort")[: n_test - per_class.sum()]:
        per_class[cls] += 1
    test = []
    for cls in (0, 1):
        members = np.flatnonzero(y == cls)
        members = members[rng(seed, 20, cls).permutation(members.size)]
        test.extend(members[:per_class[cls]].tolist())
    test = np.sort(np.array(test, dtype=int))
    train = np.setdiff1d(np.arange(y.size), test)
    return SplitIndices(train, test, int(seed))
