import struct
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from protoscope.dicom import (
    IMPLICIT_VR_LE, TAGS, DicomElement, MetaRecord, PixelSlab, TagPath, classify_plane,
    extract_pixels, extract_record, hash_uid, load_deny_list, parse_age, parse_file, read_image,
    scrub_phi, write_elements, write_file,
)
from protoscope.errors import (
    DicomError, InvalidRecord, MalformedHeader, MissingCriticalTag, PixelLengthMismatch,
    TruncatedElement, UnsupportedPixelEncoding, UnsupportedTransferSyntax,
)

from conftest import make_record, ramp


def _element(elements, keyword):
    tag = TAGS[keyword][0]
    return next(e for e in elements if e.tag == tag)


def _explicit(tag, vr, payload):
    head = struct.pack("<HH", *tag) + vr.encode()
    if vr in ("OB", "OW", "UN", "SQ", "UT"):
        return head + b"\0\0" + struct.pack("<I", len(payload)) + payload
    return head + struct.pack("<H", len(payload)) + payload


def test_tag_ordering_is_group_then_element():
    assert TagPath(0x0008, 0xFFFF) < TagPath(0x0010, 0x0000)
    assert TagPath.parse("(0018,0080)") == TagPath(0x18, 0x80)
    assert str(TagPath(0x7FE0, 0x10)) == "(7FE0,0010)"


def test_empty_stream_is_malformed():
    with pytest.raises(MalformedHeader):
        parse_file(b"")


def test_repetition_time_decodes_from_own_writer(record, pixels):
    elements = parse_file(write_file(record, pixels))
    tr = _element(elements, "RepetitionTime")
    assert tr.payload.rstrip(b" ") == b"500"
    assert tr.decoded == Decimal("500")


def test_private_tag_is_kept_as_un(record, pixels):
    data = write_file(record, pixels) + _explicit((0x0009, 0x0010), "LO", b"ACME")
    elements = parse_file(data)
    private = [e for e in elements if e.tag == TagPath(0x0009, 0x0010)]
    assert len(private) == 1 and private[0].vr == "UN" and private[0].payload == b"ACME"


def test_sequences_are_skipped(record, pixels):
    item = _explicit((0x0008, 0x1150), "UI", b"1.2\0")
    undefined_seq = (struct.pack("<HH", 0x0008, 0x1140) + b"SQ\0\0" + b"\xff\xff\xff\xff"
                     + struct.pack("<HHI", 0xFFFE, 0xE000, 0xFFFFFFFF) + item
                     + struct.pack("<HHI", 0xFFFE, 0xE00D, 0)
                     + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0))
    defined_item = struct.pack("<HHI", 0xFFFE, 0xE000, len(item)) + item
    defined_seq = _explicit((0x0008, 0x1111), "SQ", defined_item)
    data = write_file(record, pixels) + undefined_seq + defined_seq
    elements = parse_file(data)
    assert all(e.vr != "SQ" for e in elements)
    assert extract_record(elements) == extract_record(parse_file(write_file(record, pixels)))


def test_meta_header_without_preamble_is_accepted(record, pixels):
    data = write_file(record, pixels)
    assert parse_file(data[132:]) == parse_file(data)


def _implicit_file(meta_syntax, body):
    meta = _explicit((0x0002, 0x0010), "UI", meta_syntax.encode() + (b"\0" if len(meta_syntax) % 2 else b""))
    group = _explicit((0x0002, 0x0000), "UL", struct.pack("<I", len(meta)))
    return b"\0" * 128 + b"DICM" + group + meta + body


def test_implicit_vr_little_endian():
    def implicit(tag, payload):
        return struct.pack("<HHI", *tag, len(payload)) + payload
    body = (implicit((0x0018, 0x0080), b"450 ") + implicit((0x0028, 0x0010), struct.pack("<H", 2))
            + implicit((0x0028, 0x0011), struct.pack("<H", 2))
            + implicit((0x0028, 0x0100), struct.pack("<H", 16))
            + implicit((0x7FE0, 0x0010), struct.pack("<4H", 1, 2, 3, 4)))
    elements = parse_file(_implicit_file(IMPLICIT_VR_LE, body))
    assert extract_record(elements).tr_ms == 450.0
    assert extract_pixels(elements).samples.tolist() == [1, 2, 3, 4]


def test_big_endian_is_rejected():
    with pytest.raises(UnsupportedTransferSyntax):
        parse_file(_implicit_file("1.2.840.10008.1.2.2", b""))


def test_encapsulated_pixels_are_rejected():
    body = struct.pack("<HH", 0x7FE0, 0x0010) + b"OB\0\0" + b"\xff\xff\xff\xff"
    with pytest.raises(UnsupportedTransferSyntax):
        parse_file(_implicit_file("1.2.840.10008.1.2.1", body))


def test_group_length_mismatch_is_detected(record, pixels):
    data = bytearray(write_file(record, pixels))
    # the group length value sits right after its 8-byte explicit header
    value = struct.unpack_from("<I", data, 140)[0]
    struct.pack_into("<I", data, 140, value + 2)
    with pytest.raises(DicomError):
        parse_file(bytes(data))


@pytest.mark.parametrize("text,years", [("045Y", 45.0), ("018M", 1.5), ("052W", 52 / 52.14),
                                        ("365D", 1.0), ("bad", None)])
def test_parse_age(text, years):
    assert parse_age(text) == years


@pytest.mark.parametrize("cosines,plane", [
    ((0, 1, 0, 0, 0, -1), "sagittal"),
    ((1, 0, 0, 0, 0, -1), "coronal"),
    ((1, 0, 0, 0, 1, 0), "axial"),
    ((1, 0, 0, 0, 0.7071, 0.7071), "unknown"),
    ((0, 1, 0.05, 0, 0, -1), "sagittal"),
    (None, "unknown"),
])
def test_classify_plane(cosines, plane):
    assert classify_plane(cosines) == plane


def test_fov_from_reconstruction_diameter(pixels):
    rec = extract_record(parse_file(write_file(make_record(fov_mm=300.0), pixels)))
    assert rec.fov_mm == 300.0


def test_weighting_prefers_series_description(pixels):
    rec = extract_record(parse_file(write_file(make_record(weighting="T2",
                                                           protocol_name="SAG T1"), pixels)))
    assert rec.weighting == "T2"


def test_missing_rows_with_pixels_is_critical(record, pixels):
    elements = [e for e in parse_file(write_file(record, pixels)) if e.tag != TAGS["Rows"][0]]
    with pytest.raises(MissingCriticalTag):
        extract_record(elements)


def test_two_by_two_pixels():
    elements = parse_file(write_file(make_record(rows=2, cols=2),
                                     PixelSlab(2, 2, 16, [1, 65535, 3, 4])))
    slab = extract_pixels(elements)
    assert slab.samples.tolist() == [1, 65535, 3, 4]


def test_short_pixel_payload(record, pixels):
    elements = parse_file(write_file(record, pixels))
    tag = TAGS["PixelData"][0]
    short = [DicomElement(e.tag, e.vr, e.payload[:-2], None) if e.tag == tag else e
             for e in elements]
    with pytest.raises(PixelLengthMismatch):
        extract_pixels(short)


def test_signed_pixels_are_unsupported(record, pixels):
    tag = TAGS["PixelRepresentation"][0]
    elements = [DicomElement(tag, "US", b"\1\0", 1) if e.tag == tag else e
                for e in parse_file(write_file(record, pixels))]
    with pytest.raises(UnsupportedPixelEncoding):
        extract_pixels(elements)


def test_ramp_round_trip(record, pixels):
    rec, slab = read_image(write_file(record, pixels))
    assert np.array_equal(slab.samples, pixels.samples)
    assert rec == record


def test_writer_rejects_invalid_records(pixels):
    with pytest.raises(InvalidRecord):
        write_file(make_record(tr_ms=-1.0), pixels)
    with pytest.raises(InvalidRecord):
        write_file(make_record(rows=9), pixels)
    with pytest.raises(InvalidRecord):
        write_file(make_record(age_years=0.123456), pixels)


# ------------------------------------------------------------ scrubbing

def _with_phi(record, pixels):
    data = write_file(record, pixels)
    extra = (_explicit((0x0008, 0x0080), "LO", b"GENERAL HOSP")
             + _explicit((0x0010, 0x0010), "PN", b"DOE^JANE")
             + _explicit((0x0010, 0x0020), "LO", b"ID0042")
             + _explicit((0x0010, 0x0030), "DA", b"19790101")
             + _explicit((0x0029, 0x1010), "LO", b"PRIVATE!"))
    return parse_file(data + extra)


def test_scrub_removes_identity(record, pixels):
    scrubbed = scrub_phi(_with_phi(record, pixels))
    blob = write_elements(scrubbed)
    for secret in (b"DOE^JANE", b"ID0042", b"19790101", b"GENERAL HOSP", b"PRIVATE!"):
        assert secret not in blob
    assert all(e.tag.group % 2 == 0 for e in scrubbed)


def test_scrub_is_idempotent(record, pixels):
    once = scrub_phi(_with_phi(record, pixels))
    assert scrub_phi(once) == once
    assert scrub_phi(parse_file(write_elements(once))) == parse_file(write_elements(once))


def test_scrub_keeps_acquisition_tags(record, pixels):
    before = extract_record(_with_phi(record, pixels))
    after = extract_record(scrub_phi(_with_phi(record, pixels)))
    for name in ("tr_ms", "te_ms", "nex", "percent_sampling", "percent_phase_fov", "fov_mm",
                 "slice_thickness_mm", "slice_location_mm", "age_years", "weight_kg", "sex",
                 "rows", "cols", "plane", "weighting"):
        assert getattr(after, name) == getattr(before, name)
    assert after.study_id == hash_uid(record.study_id, "protoscope")
    assert after.series_id != record.series_id


def test_deny_list_parses():
    rules = load_deny_list()
    assert rules[TagPath(0x0010, 0x0010)] in ("remove", "blank")
    assert rules[TagPath(0x0020, 0x000D)] == "hash"
    assert TagPath(0x0018, 0x0080) not in rules


# ------------------------------------------------------- property tests

def _ds_values(lo, hi, places):
    return st.integers(int(lo * 10 ** places), int(hi * 10 ** places)).map(
        lambda v: v / 10 ** places)


records = st.builds(
    lambda rows, cols, **kw: (make_record(rows=rows, cols=cols, **kw), rows, cols),
    rows=st.integers(1, 12), cols=st.integers(1, 12),
    instance_number=st.one_of(st.none(), st.integers(0, 9999)),
    tr_ms=st.one_of(st.none(), _ds_values(1, 9000, 2)),
    te_ms=st.one_of(st.none(), _ds_values(1, 200, 3)),
    nex=st.one_of(st.none(), st.integers(1, 8).map(float)),
    percent_sampling=st.one_of(st.none(), _ds_values(1, 200, 1)),
    percent_phase_fov=st.one_of(st.none(), _ds_values(1, 200, 1)),
    fov_mm=st.one_of(st.none(), _ds_values(10, 500, 2)),
    slice_thickness_mm=st.one_of(st.none(), _ds_values(0.5, 10, 2)),
    slice_location_mm=st.one_of(st.none(), _ds_values(-300, 300, 3)),
    age_years=st.one_of(st.none(), st.integers(0, 120).map(float)),
    weight_kg=st.one_of(st.none(), _ds_values(1, 250, 1)),
    sex=st.sampled_from(["F", "M", "other"]),
    plane=st.sampled_from(["sagittal", "axial", "coronal", "unknown"]),
    weighting=st.sampled_from(["T1", "T2", "other"]),
    body_part=st.one_of(st.none(), st.sampled_from(["LSPINE", "CSPINE"])),
    pixel_spacing_mm=st.one_of(st.none(), st.tuples(_ds_values(0.1, 3, 4), _ds_values(0.1, 3, 4))),
)


@settings(max_examples=150, deadline=None)
@given(records, st.integers(1, 16), st.data())
def test_write_parse_round_trip(rec_shape, bits, data):
    rec, rows, cols = rec_shape
    samples = data.draw(st.lists(st.integers(0, 2 ** bits - 1), min_size=rows * cols,
                                 max_size=rows * cols))
    slab = PixelSlab(rows, cols, bits, np.array(samples, dtype=np.uint16))
    out_rec, out_slab = read_image(write_file(rec, slab))
    assert out_rec == rec
    assert out_slab.bits_stored == bits and np.array_equal(out_slab.samples, slab.samples)


def test_every_truncation_raises_a_typed_error(record, pixels):
    data = write_file(record, pixels)
    for cut in range(len(data)):
        try:
            elements = parse_file(data[:cut])
            extract_record(elements)
            extract_pixels(elements)
        except DicomError:
            continue
        pytest.fail(f"truncation at {cut} of {len(data)} bytes parsed silently")
