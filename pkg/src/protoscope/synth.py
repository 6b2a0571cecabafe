"""Synthetic cohorts whose image quality follows a simple SNR model.

Each record's acquisition parameters set a relative SNR; the image is a
fixed phantom plus Gaussian noise with amplitude inversely proportional
to that SNR. Labels are not stored here: they come out of the ordinary
quality-metric path once the images are scored.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import FeatureTable
from .dicom import MetaRecord, PixelSlab, hash_uid, write_file
from .errors import BadConfig, OutOfRange
from .explain import DIRECT, INVERSE, NONE, TrendSummary
from .seeding import rng

BITS_STORED = 12


@dataclass(frozen=True)
class PhysicsConfig:
    t1_ms: float = 1000.0
    snr_scale: float = 0.1
    label_noise: float = 0.1
    signal_level: float = 1000.0
    tr_ms: tuple[float, float] = (400.0, 900.0)
    te_ms: tuple[float, float] = (8.0, 30.0)
    nex: tuple[float, float] = (1.0, 4.0)
    percent_sampling: tuple[float, float] = (50.0, 100.0)
    percent_phase_fov: tuple[float, float] = (60.0, 100.0)
    fov_mm: tuple[float, float] = (200.0, 300.0)
    slice_thickness_mm: tuple[float, float] = (2.5, 5.0)
    rows: int = 64
    cols: int = 64
    n_decoys: int = 4

    def __post_init__(self):
        for name in ("t1_ms", "snr_scale", "signal_level"):
            if not getattr(self, name) > 0:
                raise BadConfig(f"{name} must be positive")
        if not 0 <= self.label_noise < 0.5:
            raise BadConfig("label_noise must lie in [0, 0.5)")
        for name in RANGE_FIELDS:
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise BadConfig(f"{name} range must satisfy 0 < low <= high")
        if self.rows < 8 or self.cols < 8:
            raise BadConfig("images need at least 8x8 pixels")
        if not 0 <= self.n_decoys <= len(DECOYS):
            raise BadConfig(f"n_decoys must be between 0 and {len(DECOYS)}")

    @classmethod
    def from_mapping(cls, values: dict) -> "PhysicsConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in values.items():
            if key not in known:
                raise BadConfig(f"unknown physics key {key!r}")
            if key in RANGE_FIELDS:
                value = tuple(float(v) for v in value)
            elif key in ("rows", "cols", "n_decoys"):
                value = int(value)
            else:
                value = float(value)
            kwargs[key] = value
        return cls(**kwargs)


RANGE_FIELDS = ("tr_ms", "te_ms", "nex", "percent_sampling", "percent_phase_fov", "fov_mm",
                "slice_thickness_mm")
DECOYS = ("slice_location_mm", "age_years", "weight_kg", "sex")

# higher SNR means a better image, i.e. a higher chance of class 1
PLANTED = {
    "tr_ms": DIRECT,
    "nex": DIRECT,
    "percent_sampling": DIRECT,
    "percent_phase_fov": DIRECT,
    "fov_mm": DIRECT,
    "slice_thickness_mm": DIRECT,
    "te_ms": NONE,
}


@dataclass
class GroundTruth:
    directions: dict[str, str]
    decoys: list[str] = field(default_factory=list)

    @property
    def planted(self) -> dict[str, str]:
        return {k: v for k, v in self.directions.items() if v != NONE}

    def to_dict(self) -> dict:
        return {"directions": dict(self.directions), "decoys": list(self.decoys)}


def _within(value, bounds, name):
    lo, hi = bounds
    if not lo <= value <= hi:
        raise OutOfRange(f"{name}={value} outside [{lo}, {hi}]")


def snr_model(record: MetaRecord, config: PhysicsConfig = PhysicsConfig()) -> float:
    """Relative SNR from voxel volume, phase steps, averages and TR saturation."""
    for name in ("tr_ms", "nex", "percent_sampling", "percent_phase_fov", "fov_mm",
                 "slice_thickness_mm"):
        value = getattr(record, name)
        if value is None:
            raise OutOfRange(f"{name} is missing")
        _within(value, getattr(config, name), name)
    rows = record.rows or config.rows
    cols = record.cols or config.cols
    pfov = record.percent_phase_fov / 100.0
    voxel = (record.fov_mm / cols) * (record.fov_mm * pfov / rows) * record.slice_thickness_mm
    phase_steps = rows * pfov
    averaging = math.sqrt(record.nex * phase_steps * record.percent_sampling / 100.0)
    saturation = 1.0 - math.exp(-record.tr_ms / config.t1_ms)
    return config.snr_scale * voxel * averaging * saturation


def phantom(rows: int, cols: int, level: float) -> np.ndarray:
    """Smooth elliptical structure on a raised background."""
    yy, xx = np.mgrid[0:rows, 0:cols]
    u = (xx - cols / 2) / (cols / 2)
    v = (yy - rows / 2) / (rows / 2)
    image = np.full((rows, cols), 0.4 * level)
    body = (u / 0.8) ** 2 + (v / 0.9) ** 2
    image += 0.6 * level * np.clip(1.0 - body, 0.0, 1.0) ** 0.5
    cord = (u / 0.15) ** 2 + (v / 0.7) ** 2
    image += 0.5 * level * (cord < 1.0)
    return image


def _uniform(gen, bounds, decimals):
    return float(round(gen.uniform(*bounds), decimals))


def _uid(seed: int, kind: str, index: int) -> str:
    return hash_uid(f"{seed}/{kind}/{index}", "synth")


def _sample_record(gen, config: PhysicsConfig, seed: int, index: int) -> MetaRecord:
    sex = "F" if gen.random() < 0.5 else "M"
    fov = _uniform(gen, config.fov_mm, 1)
    return MetaRecord(
        study_id=_uid(seed, "study", index),
        series_id=_uid(seed, "series", index),
        instance_number=1,
        protocol_name="SAG T1",
        body_part="LSPINE",
        coil="SPINE",
        plane="sagittal",
        weighting="T1",
        tr_ms=float(round(gen.uniform(*config.tr_ms))),
        te_ms=_uniform(gen, config.te_ms, 1),
        nex=float(gen.integers(int(math.ceil(config.nex[0])), int(config.nex[1]) + 1)),
        percent_sampling=_uniform(gen, config.percent_sampling, 1),
        percent_phase_fov=float(round(gen.uniform(*config.percent_phase_fov))),
        fov_mm=fov,
        slice_thickness_mm=_uniform(gen, config.slice_thickness_mm, 1),
        slice_location_mm=_uniform(gen, (-40.0, 40.0), 2),
        rows=config.rows,
        cols=config.cols,
        pixel_spacing_mm=(round(fov / config.rows, 6), round(fov / config.cols, 6)),
        age_years=float(gen.integers(18, 86)),
        weight_kg=_uniform(gen, (45.0, 110.0), 1),
        sex=sex,
    )


def _clamp_ranges(record: MetaRecord, config: PhysicsConfig) -> MetaRecord:
    # rounding may nudge a value just past a bound
    updates = {}
    for name in ("tr_ms", "nex", "percent_sampling", "percent_phase_fov", "fov_mm",
                 "slice_thickness_mm"):
        lo, hi = getattr(config, name)
        updates[name] = min(max(getattr(record, name), lo), hi)
    return MetaRecord(**{**asdict(record), **updates})


def gen_cohort(n: int, seed: int, config: PhysicsConfig = PhysicsConfig()):
    """Records, 12-bit pixel slabs and the planted directions for n series.

    A label_noise share of records is rendered at the SNR of the record
    with the mirrored SNR rank, which moves it across the median.
    """
    if n < 50:
        raise BadConfig("a synthetic cohort needs at least 50 records")
    gen = rng(seed, 50)
    records = [_clamp_ranges(_sample_record(gen, config, seed, i), config) for i in range(n)]
    snr = np.array([snr_model(r, config) for r in records])

    rendered = snr.copy()
    n_flip = int(round(config.label_noise * n))
    if n_flip:
        flip = rng(seed, 51).choice(n, size=n_flip, replace=False)
        order = np.argsort(snr, kind="mergesort")
        rank = np.empty(n, dtype=int)
        rank[order] = np.arange(n)
        rendered[flip] = snr[order[n - 1 - rank[flip]]]

    base = phantom(config.rows, config.cols, config.signal_level)
    slabs = []
    for i, level in enumerate(rendered):
        noise = rng(seed, 52, i).normal(0.0, config.signal_level / level, base.shape)
        samples = np.clip(np.rint(base + noise), 0, 2 ** BITS_STORED - 1).astype(np.uint16)
        slabs.append(PixelSlab(config.rows, config.cols, BITS_STORED, samples))

    directions = dict(PLANTED)
    decoys = list(DECOYS[: config.n_decoys])
    for name in decoys:
        directions[name] = NONE
    return records, slabs, GroundTruth(directions, decoys)


def cohort_files(records, slabs) -> list[tuple[str, bytes]]:
    """(relative path, file bytes) for every record, one folder per study."""
    return [(f"{i:05d}/{r.series_id}.dcm", write_file(r, s))
            for i, (r, s) in enumerate(zip(records, slabs))]


def _expand(truth: GroundTruth, features) -> dict[str, str]:
    """Map ground-truth names onto encoded columns (sex -> sex_F, sex_M)."""
    return {name: truth.directions[_source(name)] for name in features
            if _source(name) in truth.directions}


def check_recovery(summary: TrendSummary, truth: GroundTruth, min_models: int = 2,
                   features=None) -> float:
    """Share of planted features whose planted direction at least
    `min_models` models report."""
    planted = truth.planted if features is None else {f: truth.directions[f] for f in features}
    if not planted:
        raise ValueError("no planted directions to recover")
    recovered = 0
    for name, direction in planted.items():
        votes = sum(1 for d in summary.directions(name).values() if d == direction)
        recovered += votes >= min_models
    return recovered / len(planted)


def _source(column: str) -> str:
    return "sex" if column.startswith("sex_") else column


def decoy_none_counts(summary: TrendSummary, truth: GroundTruth) -> dict[str, int]:
    """For each encoded decoy column still in the table, how many models
    call its trend none. Columns removed by reduction have no trend."""
    present = {c.feature for c in summary.cells}
    return {name: sum(1 for d in summary.directions(name).values() if d == NONE)
            for name in summary.features if _source(name) in truth.decoys and name in present}


def truth_for_table(truth: GroundTruth, table: FeatureTable) -> dict[str, str]:
    return _expand(truth, table.names)
