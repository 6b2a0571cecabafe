import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import spearmanr

from protoscope.dicom import read_image
from protoscope.errors import BadConfig, OutOfRange
from protoscope.explain import DIRECT, INVERSE, NONE, TrendCell, TrendSummary
from protoscope.quality import combine_and_label, compute_metrics
from protoscope.synth import (PLANTED, GroundTruth, PhysicsConfig, check_recovery, cohort_files,
                              decoy_none_counts, gen_cohort, snr_model)

from conftest import make_record

WIDE = PhysicsConfig(fov_mm=(100.0, 300.0), tr_ms=(100.0, 1e6))


def _rec(**kw):
    base = dict(tr_ms=600.0, nex=2.0, percent_sampling=80.0, percent_phase_fov=80.0,
                fov_mm=250.0, slice_thickness_mm=4.0, rows=64, cols=64)
    base.update(kw)
    return make_record(**base)


def test_doubling_nex_is_root_two():
    assert snr_model(_rec(nex=4.0)) / snr_model(_rec(nex=2.0)) == pytest.approx(math.sqrt(2),
                                                                               rel=1e-14)


def test_tr_saturates():
    long = snr_model(_rec(tr_ms=1e6), WIDE)
    assert long == pytest.approx(snr_model(_rec(tr_ms=1e6), WIDE) / (1 - math.exp(-1000)))
    values = [snr_model(_rec(tr_ms=t), WIDE) for t in (100, 500, 2000, 10000, 1e6)]
    assert all(a < b for a, b in zip(values, values[1:]))
    assert values[-1] / values[-2] < 1.0001


def test_halving_fov_quarters_snr():
    assert snr_model(_rec(fov_mm=125.0), WIDE) / snr_model(_rec(fov_mm=250.0), WIDE) == \
        pytest.approx(0.25)


@pytest.mark.parametrize("name", ["nex", "percent_sampling", "percent_phase_fov", "fov_mm",
                                  "slice_thickness_mm", "tr_ms"])
def test_snr_monotone_over_range(name):
    lo, hi = getattr(PhysicsConfig(), name)
    values = [snr_model(_rec(**{name: float(v)})) for v in np.linspace(lo, hi, 25)]
    assert all(a < b for a, b in zip(values, values[1:]))


def test_out_of_range():
    with pytest.raises(OutOfRange):
        snr_model(_rec(nex=9.0))
    with pytest.raises(OutOfRange):
        snr_model(_rec(tr_ms=None))


def test_config_validation():
    with pytest.raises(BadConfig):
        PhysicsConfig(label_noise=0.5)
    with pytest.raises(BadConfig):
        PhysicsConfig(fov_mm=(300.0, 200.0))
    with pytest.raises(BadConfig):
        gen_cohort(49, 0)
    assert PhysicsConfig.from_mapping({"nex": [1, 2], "rows": "32"}).nex == (1.0, 2.0)


def test_same_seed_same_bytes():
    a = cohort_files(*gen_cohort(60, 7)[:2])
    b = cohort_files(*gen_cohort(60, 7)[:2])
    assert a == b
    assert cohort_files(*gen_cohort(60, 8)[:2]) != a


def test_ground_truth():
    truth = gen_cohort(50, 0)[2]
    assert truth.planted == {k: v for k, v in PLANTED.items() if v != NONE}
    assert all(truth.directions[d] == NONE for d in truth.decoys)
    assert len(truth.decoys) == 4


@pytest.fixture(scope="module")
def cohort():
    records, slabs, truth = gen_cohort(400, 3)
    labels = combine_and_label([compute_metrics(s) for s in slabs])
    return records, slabs, truth, labels


def test_score_tracks_snr(cohort):
    records, _, _, labels = cohort
    snr = [snr_model(r) for r in records]
    # a tenth of the records are rendered at a mirrored SNR
    assert spearmanr(snr, [l.score for l in labels]).statistic < -0.7
    records, slabs, _ = gen_cohort(200, 4, PhysicsConfig(label_noise=0.0))
    scores = [l.score for l in combine_and_label([compute_metrics(s) for s in slabs])]
    assert spearmanr([snr_model(r) for r in records], scores).statistic < -0.99


def test_noise_free_labels_follow_snr():
    records, slabs, _ = gen_cohort(200, 4, PhysicsConfig(label_noise=0.0))
    labels = np.array([l.label for l in combine_and_label([compute_metrics(s) for s in slabs])])
    snr = np.array([snr_model(r) for r in records])
    assert np.mean(labels == (snr > np.median(snr))) >= 0.97


def test_decoys_are_uninformative(cohort):
    records, _, _, labels = cohort
    y = [l.label for l in labels]
    for name in ("slice_location_mm", "age_years", "weight_kg"):
        assert abs(spearmanr([getattr(r, name) for r in records], y).statistic) <= 0.15
    assert abs(spearmanr([r.sex == "F" for r in records], y).statistic) <= 0.15


def test_files_reingest_identically(cohort):
    records, slabs, _, _ = cohort
    for (path, data), record, slab in list(zip(cohort_files(records, slabs), records, slabs))[:40]:
        rec, pix = read_image(data)
        assert rec == record and np.array_equal(pix.samples, slab.samples)


def _summary(directions):
    cells = [TrendCell(m, f, 1, 1.0, d) for m, per in directions.items() for f, d in per.items()]
    features = list(dict.fromkeys(f for per in directions.values() for f in per))
    return TrendSummary(cells, features, list(directions))


def test_check_recovery():
    truth = GroundTruth({"nex": DIRECT, "fov_mm": DIRECT, "te_ms": NONE, "age_years": NONE},
                        ["age_years"])
    right = {m: {"nex": DIRECT, "fov_mm": DIRECT, "age_years": NONE} for m in "AB"}
    assert check_recovery(_summary(right), truth) == 1.0
    split = {"A": {"nex": DIRECT, "fov_mm": INVERSE}, "B": {"nex": INVERSE, "fov_mm": DIRECT}}
    assert check_recovery(_summary(split), truth) == 0.0
    half = {m: {"nex": DIRECT, "fov_mm": NONE} for m in "AB"}
    assert check_recovery(_summary(half), truth) == 0.5
    assert decoy_none_counts(_summary(right), truth) == {"age_years": 2}
