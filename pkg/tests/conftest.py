import numpy as np
import pytest

from protoscope.dicom import MetaRecord, PixelSlab


def make_record(**overrides) -> MetaRecord:
    base = dict(
        study_id="1.2.3.4", series_id="1.2.3.4.5", instance_number=3,
        protocol_name="SAG T1 TSE", body_part="LSPINE", coil="SPINE", plane="sagittal",
        weighting="T1", tr_ms=500.0, te_ms=12.5, nex=2.0, percent_sampling=80.0,
        percent_phase_fov=75.0, fov_mm=300.0, slice_thickness_mm=4.0, slice_location_mm=-12.25,
        rows=4, cols=5, pixel_spacing_mm=(0.75, 0.75), age_years=45.0, weight_kg=70.5, sex="F",
    )
    base.update(overrides)
    return MetaRecord(**base)


def ramp(rows=4, cols=5, bits=12) -> PixelSlab:
    return PixelSlab(rows, cols, bits, np.arange(rows * cols, dtype=np.uint16) * 7)


@pytest.fixture
def record():
    return make_record()


@pytest.fixture
def pixels():
    return ramp()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
