"""Minimal DICOM PS3.10 reader/writer for MR acquisition metadata.

Only the two uncompressed little-endian transfer syntaxes are handled.
Sequences are stepped over without being decoded.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass, field, fields
from decimal import Decimal, InvalidOperation
from importlib import resources
from typing import NamedTuple, Optional, Union

import numpy as np

from .errors import (
    InvalidRecord,
    MalformedHeader,
    MissingCriticalTag,
    PixelLengthMismatch,
    TruncatedElement,
    UnsupportedPixelEncoding,
    UnsupportedTransferSyntax,
)

EXPLICIT_VR_LE = "1.2.840.10008.1.2.1"
IMPLICIT_VR_LE = "1.2.840.10008.1.2"
MR_IMAGE_STORAGE = "1.2.840.10008.5.1.4.1.1.4"
IMPLEMENTATION_UID = "1.2.826.0.1.3680043.10.1024"
DEID_METHOD = "protoscope scrub v1"

SUPPORTED_VRS = frozenset(
    "DS IS US SS UL CS LO SH PN DA AS TM UI OW OB FL FD UN".split()
)
# explicit VR codes that use the 2 reserved bytes + 4-byte length layout
_LONG_VRS = frozenset("OB OD OF OL OV OW SQ SV UC UN UR UT UV".split())
_STRING_VRS = frozenset("CS LO SH PN DA AS TM UI".split())
_VALID_VRS = _LONG_VRS | frozenset(
    "AE AS AT CS DA DS DT FD FL IS LO LT PN SH SL SS ST TM UI UL US".split()
)
UNDEFINED_LENGTH = 0xFFFFFFFF

ITEM = (0xFFFE, 0xE000)
ITEM_DELIM = (0xFFFE, 0xE00D)
SEQ_DELIM = (0xFFFE, 0xE0DD)


class TagPath(NamedTuple):
    """(group, element) pair; tuple ordering is the DICOM tag order."""

    group: int
    element: int

    def __str__(self) -> str:
        return f"({self.group:04X},{self.element:04X})"

    @classmethod
    def parse(cls, text: str) -> "TagPath":
        g, e = text.strip().strip("()").split(",")
        return cls(int(g, 16), int(e, 16))


# keyword -> (tag, vr); the subset this pipeline reads or writes
TAGS: dict[str, tuple[TagPath, str]] = {
    "FileMetaInformationGroupLength": (TagPath(0x0002, 0x0000), "UL"),
    "FileMetaInformationVersion": (TagPath(0x0002, 0x0001), "OB"),
    "MediaStorageSOPClassUID": (TagPath(0x0002, 0x0002), "UI"),
    "MediaStorageSOPInstanceUID": (TagPath(0x0002, 0x0003), "UI"),
    "TransferSyntaxUID": (TagPath(0x0002, 0x0010), "UI"),
    "ImplementationClassUID": (TagPath(0x0002, 0x0012), "UI"),
    "SOPClassUID": (TagPath(0x0008, 0x0016), "UI"),
    "SOPInstanceUID": (TagPath(0x0008, 0x0018), "UI"),
    "StudyDate": (TagPath(0x0008, 0x0020), "DA"),
    "SeriesDate": (TagPath(0x0008, 0x0021), "DA"),
    "AcquisitionDate": (TagPath(0x0008, 0x0022), "DA"),
    "ContentDate": (TagPath(0x0008, 0x0023), "DA"),
    "StudyTime": (TagPath(0x0008, 0x0030), "TM"),
    "AccessionNumber": (TagPath(0x0008, 0x0050), "SH"),
    "Modality": (TagPath(0x0008, 0x0060), "CS"),
    "Manufacturer": (TagPath(0x0008, 0x0070), "LO"),
    "InstitutionName": (TagPath(0x0008, 0x0080), "LO"),
    "ReferringPhysicianName": (TagPath(0x0008, 0x0090), "PN"),
    "StationName": (TagPath(0x0008, 0x1010), "SH"),
    "SeriesDescription": (TagPath(0x0008, 0x103E), "LO"),
    "PerformingPhysicianName": (TagPath(0x0008, 0x1050), "PN"),
    "OperatorsName": (TagPath(0x0008, 0x1070), "PN"),
    "PatientName": (TagPath(0x0010, 0x0010), "PN"),
    "PatientID": (TagPath(0x0010, 0x0020), "LO"),
    "PatientBirthDate": (TagPath(0x0010, 0x0030), "DA"),
    "PatientSex": (TagPath(0x0010, 0x0040), "CS"),
    "PatientAge": (TagPath(0x0010, 0x1010), "AS"),
    "PatientWeight": (TagPath(0x0010, 0x1030), "DS"),
    "PatientAddress": (TagPath(0x0010, 0x1040), "LO"),
    "PatientIdentityRemoved": (TagPath(0x0012, 0x0062), "CS"),
    "DeidentificationMethod": (TagPath(0x0012, 0x0063), "LO"),
    "BodyPartExamined": (TagPath(0x0018, 0x0015), "CS"),
    "SliceThickness": (TagPath(0x0018, 0x0050), "DS"),
    "RepetitionTime": (TagPath(0x0018, 0x0080), "DS"),
    "EchoTime": (TagPath(0x0018, 0x0081), "DS"),
    "NumberOfAverages": (TagPath(0x0018, 0x0083), "DS"),
    "PercentSampling": (TagPath(0x0018, 0x0093), "DS"),
    "PercentPhaseFieldOfView": (TagPath(0x0018, 0x0094), "DS"),
    "ReconstructionDiameter": (TagPath(0x0018, 0x1100), "DS"),
    "ProtocolName": (TagPath(0x0018, 0x1030), "LO"),
    "ReceiveCoilName": (TagPath(0x0018, 0x1250), "SH"),
    "StudyInstanceUID": (TagPath(0x0020, 0x000D), "UI"),
    "SeriesInstanceUID": (TagPath(0x0020, 0x000E), "UI"),
    "StudyID": (TagPath(0x0020, 0x0010), "SH"),
    "InstanceNumber": (TagPath(0x0020, 0x0013), "IS"),
    "ImageOrientationPatient": (TagPath(0x0020, 0x0037), "DS"),
    "SliceLocation": (TagPath(0x0020, 0x1041), "DS"),
    "SamplesPerPixel": (TagPath(0x0028, 0x0002), "US"),
    "PhotometricInterpretation": (TagPath(0x0028, 0x0004), "CS"),
    "Rows": (TagPath(0x0028, 0x0010), "US"),
    "Columns": (TagPath(0x0028, 0x0011), "US"),
    "PixelSpacing": (TagPath(0x0028, 0x0030), "DS"),
    "BitsAllocated": (TagPath(0x0028, 0x0100), "US"),
    "BitsStored": (TagPath(0x0028, 0x0101), "US"),
    "HighBit": (TagPath(0x0028, 0x0102), "US"),
    "PixelRepresentation": (TagPath(0x0028, 0x0103), "US"),
    "PixelData": (TagPath(0x7FE0, 0x0010), "OW"),
}
_VR_BY_TAG = {tag: vr for tag, vr in TAGS.values()}
# tags that are sequences in implicit VR files we are likely to meet
_SQ_TAGS = {TagPath(0x0008, 0x1140), TagPath(0x0008, 0x1111), TagPath(0x0008, 0x1032),
            TagPath(0x0040, 0x0275), TagPath(0x0018, 0x9346)}

Decoded = Union[int, float, Decimal, str, bytes, tuple, None]


@dataclass(frozen=True)
class DicomElement:
    tag: TagPath
    vr: str
    payload: bytes
    decoded: Decoded = None


@dataclass(frozen=True)
class MetaRecord:
    """Acquisition parameters and patient covariates of one image."""

    study_id: str = ""
    series_id: str = ""
    instance_number: Optional[int] = None
    protocol_name: Optional[str] = None
    body_part: Optional[str] = None
    coil: Optional[str] = None
    plane: str = "unknown"
    weighting: str = "other"
    tr_ms: Optional[float] = None
    te_ms: Optional[float] = None
    nex: Optional[float] = None
    percent_sampling: Optional[float] = None
    percent_phase_fov: Optional[float] = None
    fov_mm: Optional[float] = None
    slice_thickness_mm: Optional[float] = None
    slice_location_mm: Optional[float] = None
    rows: Optional[int] = None
    cols: Optional[int] = None
    pixel_spacing_mm: Optional[tuple[float, float]] = None
    age_years: Optional[float] = None
    weight_kg: Optional[float] = None
    sex: str = "other"

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        if self.pixel_spacing_mm is not None:
            out["pixel_spacing_mm"] = list(self.pixel_spacing_mm)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MetaRecord":
        data = dict(data)
        if data.get("pixel_spacing_mm") is not None:
            data["pixel_spacing_mm"] = tuple(data["pixel_spacing_mm"])
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


@dataclass
class PixelSlab:
    rows: int
    cols: int
    bits_stored: int
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples).ravel()
        if self.samples.size != self.rows * self.cols:
            raise PixelLengthMismatch(
                f"{self.samples.size} samples for a {self.rows}x{self.cols} image")
        if self.samples.size and (self.samples.min() < 0
                                  or self.samples.max() >= 2 ** self.bits_stored):
            raise UnsupportedPixelEncoding("sample outside the stored bit range")

    @property
    def image(self) -> np.ndarray:
        return self.samples.reshape(self.rows, self.cols)


# ---------------------------------------------------------------- parsing

class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int, what: str) -> bytes:
        if n > self.remaining():
            raise TruncatedElement(
                f"{what}: need {n} bytes at offset {self.pos}, {self.remaining()} left")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def header(self, explicit: bool) -> tuple[TagPath, str, int]:
        group, elem = struct.unpack("<HH", self.take(4, "tag"))
        tag = TagPath(group, elem)
        if tag in (ITEM, ITEM_DELIM, SEQ_DELIM):
            (length,) = struct.unpack("<I", self.take(4, "item length"))
            return tag, "", length
        if explicit:
            raw_vr = self.take(2, "VR")
            try:
                vr = raw_vr.decode("ascii")
            except UnicodeDecodeError:
                raise MalformedHeader(f"non-ASCII VR at {tag}") from None
            if vr not in _VALID_VRS:
                raise MalformedHeader(f"unknown VR {vr!r} at {tag}")
            if vr in _LONG_VRS:
                self.take(2, "reserved")
                (length,) = struct.unpack("<I", self.take(4, "length"))
            else:
                (length,) = struct.unpack("<H", self.take(2, "length"))
        else:
            (length,) = struct.unpack("<I", self.take(4, "length"))
            vr = _VR_BY_TAG.get(tag, "UN")
            if tag in _SQ_TAGS or (length == UNDEFINED_LENGTH and tag != TAGS["PixelData"][0]):
                vr = "SQ"
        return tag, vr, length


def _skip_undefined_sequence(reader: _Reader, explicit: bool) -> None:
    while True:
        tag, _, length = reader.header(explicit)
        if tag == SEQ_DELIM:
            return
        if tag != ITEM:
            raise MalformedHeader(f"expected item in sequence, got {tag}")
        if length == UNDEFINED_LENGTH:
            _skip_undefined_item(reader, explicit)
        else:
            reader.take(length, "sequence item")


def _skip_undefined_item(reader: _Reader, explicit: bool) -> None:
    while True:
        tag, vr, length = reader.header(explicit)
        if tag == ITEM_DELIM:
            return
        if length == UNDEFINED_LENGTH:
            if vr in ("SQ", "UN"):
                _skip_undefined_sequence(reader, explicit)
                continue
            raise MalformedHeader(f"undefined length on {vr} element {tag}")
        reader.take(length, f"element {tag}")


def _decode_value(vr: str, payload: bytes) -> Decoded:
    if vr not in SUPPORTED_VRS:
        return None
    if vr in ("OW", "OB", "UN"):
        return bytes(payload)
    if vr in ("US", "SS", "UL", "FL", "FD"):
        code, size = {"US": ("H", 2), "SS": ("h", 2), "UL": ("I", 4),
                      "FL": ("f", 4), "FD": ("d", 8)}[vr]
        count = len(payload) // size
        values = struct.unpack(f"<{count}{code}", payload[:count * size])
        if not values:
            return None
        return values[0] if count == 1 else values
    text = payload.decode("latin-1").rstrip("\x00 ")
    if vr in ("DS", "IS"):
        parts = [p.strip() for p in text.split("\\")]
        if not any(parts):
            return None
        try:
            values = tuple(Decimal(p) if vr == "DS" else int(p) for p in parts)
        except (InvalidOperation, ValueError):
            return text
        return values[0] if len(values) == 1 else values
    return text


def _make_element(tag: TagPath, vr: str, payload: bytes) -> DicomElement:
    if tag.group % 2 == 1 or (tag not in _VR_BY_TAG and vr not in SUPPORTED_VRS):
        vr = "UN"
    return DicomElement(tag, vr, payload, _decode_value(vr, payload))


def _looks_like_meta(data: bytes, pos: int) -> bool:
    if len(data) - pos < 8:
        return False
    group, _ = struct.unpack_from("<HH", data, pos)
    return group == 0x0002 and data[pos + 4:pos + 6].isalpha()


def parse_file(data: bytes) -> list[DicomElement]:
    """Parse a DICOM byte stream into its top-level elements, in file order."""
    if len(data) >= 132 and data[128:132] == b"DICM":
        pos = 132
    elif _looks_like_meta(data, 0):
        pos = 0
    else:
        raise MalformedHeader("no DICM magic and no group 0002 header")

    reader = _Reader(data, pos)
    elements: list[DicomElement] = []
    # meta group is always explicit little endian
    while reader.remaining() >= 4 and struct.unpack_from("<H", data, reader.pos)[0] == 0x0002:
        tag, vr, length = reader.header(True)
        if length == UNDEFINED_LENGTH:
            raise MalformedHeader(f"undefined length in file meta element {tag}")
        elements.append(_make_element(tag, vr, reader.take(length, f"element {tag}")))
    if not elements:
        raise MalformedHeader("empty file meta header")
    declared = next((e.decoded for e in elements
                     if e.tag == TAGS["FileMetaInformationGroupLength"][0]), None)
    if isinstance(declared, int):
        consumed = reader.pos - pos - 12
        if consumed != declared:
            raise TruncatedElement(f"file meta group is {consumed} bytes, header says {declared}")

    syntax = next((e.decoded for e in elements if e.tag == TAGS["TransferSyntaxUID"][0]), None)
    if syntax is None:
        # no declared syntax: sniff for an explicit VR after the first tag
        explicit = reader.remaining() >= 6 and data[reader.pos + 4:reader.pos + 6] in {
            v.encode() for v in _VALID_VRS}
    elif syntax == EXPLICIT_VR_LE:
        explicit = True
    elif syntax == IMPLICIT_VR_LE:
        explicit = False
    else:
        raise UnsupportedTransferSyntax(str(syntax))

    while reader.remaining() > 0:
        tag, vr, length = reader.header(explicit)
        if tag in (ITEM, ITEM_DELIM, SEQ_DELIM):
            raise MalformedHeader(f"stray item tag {tag} at top level")
        if length == UNDEFINED_LENGTH:
            if tag == TAGS["PixelData"][0]:
                raise UnsupportedTransferSyntax("encapsulated (compressed) pixel data")
            if vr not in ("SQ", "UN"):
                raise MalformedHeader(f"undefined length on {vr} element {tag}")
            _skip_undefined_sequence(reader, explicit)
            continue
        payload = reader.take(length, f"element {tag}")
        if vr == "SQ":
            continue
        elements.append(_make_element(tag, vr, payload))
    return elements


# ------------------------------------------------------------- extraction

_AGE_DIVISORS = {"D": 365.0, "W": 52.14, "M": 12.0, "Y": 1.0}
_AGE_RE = re.compile(r"^(\d{1,3})([DWMY])$")
PLANE_TOLERANCE = 0.1


def parse_age(text: str) -> Optional[float]:
    """Convert a DICOM AS string such as '045Y' or '018M' to years."""
    match = _AGE_RE.match(text.strip().upper())
    if not match:
        return None
    return int(match.group(1)) / _AGE_DIVISORS[match.group(2)]


def classify_plane(cosines) -> str:
    """Name the acquisition plane from the six Image Orientation direction cosines."""
    if cosines is None or len(cosines) != 6:
        return "unknown"
    row = np.array([float(c) for c in cosines[:3]])
    col = np.array([float(c) for c in cosines[3:]])
    normal = np.cross(row, col)
    axis = int(np.argmax(np.abs(normal)))
    if abs(normal[axis]) < 1.0 - PLANE_TOLERANCE:
        return "unknown"
    return ("sagittal", "coronal", "axial")[axis]


def _weighting(description: Optional[str], protocol: Optional[str]) -> str:
    # the series description decides on its own when present
    source = description if description is not None else (protocol or "")
    tokens = set(re.findall(r"T[12]", source.upper()))
    if tokens == {"T1"}:
        return "T1"
    if tokens == {"T2"}:
        return "T2"
    return "other"


def _by_tag(elements) -> dict[TagPath, DicomElement]:
    return {e.tag: e for e in elements}


def _get(index, keyword):
    elem = index.get(TAGS[keyword][0])
    if elem is None:
        return None
    value = elem.decoded
    if value == "" or value == b"":
        return None
    return value


def _as_float(value) -> Optional[float]:
    if value is None:
        return None
    if isinstance(value, tuple):
        value = value[0]
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def _as_int(value) -> Optional[int]:
    if value is None:
        return None
    if isinstance(value, tuple):
        value = value[0]
    try:
        return int(value)
    except (TypeError, ValueError):
        return None


def _as_str(value) -> Optional[str]:
    if value is None:
        return None
    if isinstance(value, bytes):
        return value.decode("latin-1").rstrip("\x00 ")
    return str(value)


def extract_record(elements) -> MetaRecord:
    """Build a MetaRecord from parsed elements; absent tags become None."""
    idx = _by_tag(elements)
    rows = _as_int(_get(idx, "Rows"))
    cols = _as_int(_get(idx, "Columns"))
    if TAGS["PixelData"][0] in idx and (rows is None or cols is None):
        raise MissingCriticalTag("Rows/Columns absent but pixel data present")

    spacing = _get(idx, "PixelSpacing")
    if isinstance(spacing, tuple) and len(spacing) == 2:
        spacing = (float(spacing[0]), float(spacing[1]))
    else:
        spacing = None
    age_text = _as_str(_get(idx, "PatientAge"))
    sex = (_as_str(_get(idx, "PatientSex")) or "").upper()
    orientation = _get(idx, "ImageOrientationPatient")

    return MetaRecord(
        study_id=_as_str(_get(idx, "StudyInstanceUID")) or "",
        series_id=_as_str(_get(idx, "SeriesInstanceUID")) or "",
        instance_number=_as_int(_get(idx, "InstanceNumber")),
        protocol_name=_as_str(_get(idx, "ProtocolName")),
        body_part=_as_str(_get(idx, "BodyPartExamined")),
        coil=_as_str(_get(idx, "ReceiveCoilName")),
        plane=classify_plane(orientation if isinstance(orientation, tuple) else None),
        weighting=_weighting(_as_str(_get(idx, "SeriesDescription")),
                             _as_str(_get(idx, "ProtocolName"))),
        tr_ms=_as_float(_get(idx, "RepetitionTime")),
        te_ms=_as_float(_get(idx, "EchoTime")),
        nex=_as_float(_get(idx, "NumberOfAverages")),
        percent_sampling=_as_float(_get(idx, "PercentSampling")),
        percent_phase_fov=_as_float(_get(idx, "PercentPhaseFieldOfView")),
        fov_mm=_as_float(_get(idx, "ReconstructionDiameter")),
        slice_thickness_mm=_as_float(_get(idx, "SliceThickness")),
        slice_location_mm=_as_float(_get(idx, "SliceLocation")),
        rows=rows,
        cols=cols,
        pixel_spacing_mm=spacing,
        age_years=parse_age(age_text) if age_text else None,
        weight_kg=_as_float(_get(idx, "PatientWeight")),
        sex=sex if sex in ("F", "M") else "other",
    )


def extract_pixels(elements) -> PixelSlab:
    """Decode uncompressed monochrome pixel data."""
    idx = _by_tag(elements)
    pixel = idx.get(TAGS["PixelData"][0])
    if pixel is None:
        raise MissingCriticalTag("no pixel data element")
    rows = _as_int(_get(idx, "Rows"))
    cols = _as_int(_get(idx, "Columns"))
    if rows is None or cols is None:
        raise MissingCriticalTag("Rows/Columns absent")
    allocated = _as_int(_get(idx, "BitsAllocated")) or 16
    stored = _as_int(_get(idx, "BitsStored")) or allocated
    if (_as_int(_get(idx, "SamplesPerPixel")) or 1) != 1:
        raise UnsupportedPixelEncoding("only single-sample (monochrome) pixels")
    if (_as_int(_get(idx, "PixelRepresentation")) or 0) != 0:
        raise UnsupportedPixelEncoding("signed pixel representation")
    if allocated not in (8, 16) or not 0 < stored <= allocated:
        raise UnsupportedPixelEncoding(f"bits allocated {allocated}, stored {stored}")

    nbytes = rows * cols * allocated // 8
    payload = pixel.payload
    # one trailing pad byte keeps odd-sized 8-bit data at even length
    if len(payload) not in (nbytes, nbytes + (nbytes % 2)):
        raise PixelLengthMismatch(f"pixel payload {len(payload)} bytes, expected {nbytes}")
    dtype = "<u2" if allocated == 16 else "u1"
    samples = np.frombuffer(payload[:nbytes], dtype=dtype).astype(np.uint16)
    samples &= (1 << stored) - 1
    return PixelSlab(rows, cols, stored, samples)


# -------------------------------------------------------------- scrubbing

def load_deny_list(path=None) -> dict[TagPath, str]:
    """Read 'GGGG,EEEE action' lines; '#' starts a comment."""
    if path is None:
        text = resources.files("protoscope").joinpath("phi_denylist.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    rules: dict[TagPath, str] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tag_text, action = line.split()
        if action not in ("remove", "blank", "hash"):
            raise ValueError(f"unknown scrub action {action!r}")
        rules[TagPath.parse(tag_text)] = action
    return rules


def hash_uid(uid: str, salt: str) -> str:
    digest = hashlib.sha256(f"{salt}|{uid}".encode()).digest()
    return "2.25." + str(int.from_bytes(digest[:16], "big"))


def _text_element(keyword: str, value: str) -> DicomElement:
    tag, vr = TAGS[keyword]
    payload = _pad(value.encode("latin-1"), vr)
    return DicomElement(tag, vr, payload, _decode_value(vr, payload))


def scrub_phi(elements, salt: str = "protoscope", deny_list=None) -> list[DicomElement]:
    """Remove or blank identifying tags and re-key UIDs by salted hash.

    Private (odd-group) elements are always dropped. The output carries
    PatientIdentityRemoved=YES, which marks UIDs as already hashed so a
    second pass leaves them alone.
    """
    rules = load_deny_list() if deny_list is None else deny_list
    idx = _by_tag(elements)
    marker = idx.get(TAGS["DeidentificationMethod"][0])
    already = marker is not None and marker.decoded == DEID_METHOD

    out = []
    for elem in elements:
        if elem.tag.group % 2 == 1:
            continue
        action = rules.get(elem.tag)
        if action == "remove":
            continue
        if action == "blank":
            elem = DicomElement(elem.tag, elem.vr, b"", _decode_value(elem.vr, b""))
        elif action == "hash" and not already:
            value = _as_str(elem.decoded) or ""
            payload = _pad(hash_uid(value, salt).encode(), "UI")
            elem = DicomElement(elem.tag, elem.vr, payload, _decode_value(elem.vr, payload))
        out.append(elem)

    if not already:
        out = [e for e in out if e.tag not in (TAGS["PatientIdentityRemoved"][0],
                                               TAGS["DeidentificationMethod"][0])]
        out += [_text_element("PatientIdentityRemoved", "YES"),
                _text_element("DeidentificationMethod", DEID_METHOD)]
        out.sort(key=lambda e: e.tag)
    return out


# ---------------------------------------------------------------- writing

def _pad(raw: bytes, vr: str) -> bytes:
    if len(raw) % 2:
        raw += b"\x00" if vr in ("UI", "OB", "UN") else b" "
    return raw


def _ds(value: float) -> str:
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    if len(text) > 16 or not np.isfinite(value):
        raise InvalidRecord(f"{value!r} has no exact 16-character DS form")
    return text


def _format_age(years: float) -> str:
    for unit in "YMWD":
        count = years * _AGE_DIVISORS[unit]
        n = round(count)
        if 0 <= n <= 999 and n / _AGE_DIVISORS[unit] == years:
            return f"{n:03d}{unit}"
    raise InvalidRecord(f"age {years!r} has no exact AS form")


_ORIENTATION = {
    "sagittal": (0, 1, 0, 0, 0, -1),
    "coronal": (1, 0, 0, 0, 0, -1),
    "axial": (1, 0, 0, 0, 1, 0),
}


def _encode(vr: str, value) -> bytes:
    if vr in ("US", "UL"):
        values = value if isinstance(value, tuple) else (value,)
        return struct.pack(f"<{len(values)}{'H' if vr == 'US' else 'I'}", *values)
    if vr in ("OB", "OW"):
        return _pad(bytes(value), vr)
    if vr == "DS":
        values = value if isinstance(value, tuple) else (value,)
        text = "\\".join(_ds(v) for v in values)
    elif vr == "IS":
        text = str(int(value))
    else:
        text = str(value)
    return _pad(text.encode("latin-1"), vr)


def _element_bytes(tag: TagPath, vr: str, payload: bytes) -> bytes:
    head = struct.pack("<HH", tag.group, tag.element) + vr.encode()
    if vr in _LONG_VRS:
        return head + b"\x00\x00" + struct.pack("<I", len(payload)) + payload
    if len(payload) > 0xFFFF:
        raise InvalidRecord(f"value too long for {vr} at {tag}")
    return head + struct.pack("<H", len(payload)) + payload


def _check_record(record: MetaRecord, pixels: PixelSlab) -> None:
    if record.rows is not None and record.rows != pixels.rows:
        raise InvalidRecord("record rows differ from pixel slab")
    if record.cols is not None and record.cols != pixels.cols:
        raise InvalidRecord("record cols differ from pixel slab")
    if pixels.rows <= 0 or pixels.cols <= 0:
        raise InvalidRecord("rows and cols must be positive")
    if record.tr_ms is not None and not record.tr_ms > 0:
        raise InvalidRecord("tr_ms must be positive")
    if record.fov_mm is not None and not record.fov_mm > 0:
        raise InvalidRecord("fov_mm must be positive")
    for name in ("percent_sampling", "percent_phase_fov"):
        value = getattr(record, name)
        if value is not None and not 0 < value <= 200:
            raise InvalidRecord(f"{name} outside (0, 200]")
    if record.plane not in ("sagittal", "axial", "coronal", "unknown"):
        raise InvalidRecord(f"plane {record.plane!r}")
    if record.weighting not in ("T1", "T2", "other"):
        raise InvalidRecord(f"weighting {record.weighting!r}")
    if pixels.bits_stored > 16:
        raise InvalidRecord("more than 16 bits stored")
    if not 1 <= len(record.study_id) <= 64 or not 1 <= len(record.series_id) <= 64:
        raise InvalidRecord("study_id and series_id must be 1..64 characters")


def write_file(record: MetaRecord, pixels: PixelSlab) -> bytes:
    """Serialize a record and its pixels as an Explicit VR Little Endian file."""
    _check_record(record, pixels)
    instance = record.instance_number
    sop_uid = hash_uid(f"{record.series_id}/{instance}", "sop")

    values: dict[str, object] = {
        "SOPClassUID": MR_IMAGE_STORAGE,
        "SOPInstanceUID": sop_uid,
        "Modality": "MR",
        "PatientSex": {"F": "F", "M": "M"}.get(record.sex, "O"),
        "StudyInstanceUID": record.study_id,
        "SeriesInstanceUID": record.series_id,
        "SeriesDescription": record.weighting.upper(),
        "SamplesPerPixel": 1,
        "PhotometricInterpretation": "MONOCHROME2",
        "Rows": pixels.rows,
        "Columns": pixels.cols,
        "BitsAllocated": 16,
        "BitsStored": pixels.bits_stored,
        "HighBit": pixels.bits_stored - 1,
        "PixelRepresentation": 0,
        "PixelData": pixels.samples.astype("<u2").tobytes(),
    }
    optional = {
        "InstanceNumber": instance,
        "ProtocolName": record.protocol_name,
        "BodyPartExamined": record.body_part,
        "ReceiveCoilName": record.coil,
        "RepetitionTime": record.tr_ms,
        "EchoTime": record.te_ms,
        "NumberOfAverages": record.nex,
        "PercentSampling": record.percent_sampling,
        "PercentPhaseFieldOfView": record.percent_phase_fov,
        "ReconstructionDiameter": record.fov_mm,
        "SliceThickness": record.slice_thickness_mm,
        "SliceLocation": record.slice_location_mm,
        "PixelSpacing": record.pixel_spacing_mm,
        "PatientWeight": record.weight_kg,
        "ImageOrientationPatient": _ORIENTATION.get(record.plane),
        "PatientAge": None if record.age_years is None else _format_age(record.age_years),
    }
    values.update({k: v for k, v in optional.items() if v is not None})

    meta_body = b"".join(
        _element_bytes(TAGS[k][0], TAGS[k][1], _encode(TAGS[k][1], v))
        for k, v in [("FileMetaInformationVersion", b"\x00\x01"),
                     ("MediaStorageSOPClassUID", MR_IMAGE_STORAGE),
                     ("MediaStorageSOPInstanceUID", sop_uid),
                     ("TransferSyntaxUID", EXPLICIT_VR_LE),
                     ("ImplementationClassUID", IMPLEMENTATION_UID)])
    group_length = _element_bytes(TAGS["FileMetaInformationGroupLength"][0], "UL",
                                  struct.pack("<I", len(meta_body)))
    body = b"".join(
        _element_bytes(TAGS[k][0], TAGS[k][1], _encode(TAGS[k][1], values[k]))
        for k in sorted(values, key=lambda k: TAGS[k][0]))
    return b"\x00" * 128 + b"DICM" + group_length + meta_body + body


def write_elements(elements) -> bytes:
    """Re-serialize a parsed (e.g. scrubbed) element list as Explicit VR LE."""
    meta = [e for e in elements if e.tag.group == 0x0002 and e.tag.element != 0]
    rest = [e for e in elements if e.tag.group != 0x0002]
    meta = [e if e.tag != TAGS["TransferSyntaxUID"][0]
            else DicomElement(e.tag, "UI", _pad(EXPLICIT_VR_LE.encode(), "UI"), EXPLICIT_VR_LE)
            for e in meta]
    meta_body = b"".join(_element_bytes(e.tag, e.vr, _pad(e.payload, e.vr)) for e in meta)
    group_length = _element_bytes(TAGS["FileMetaInformationGroupLength"][0], "UL",
                                  struct.pack("<I", len(meta_body)))
    body = b"".join(_element_bytes(e.tag, e.vr if e.vr in _VALID_VRS else "UN",
                                   _pad(e.payload, e.vr)) for e in rest)
    return b"\x00" * 128 + b"DICM" + group_length + meta_body + body


def read_path(path) -> list[DicomElement]:
    with open(path, "rb") as fh:
        return parse_file(fh.read())


def read_image(data: bytes) -> tuple[MetaRecord, PixelSlab]:
    """Parse, extract the record and decode pixels in one step."""
    elements = parse_file(data)
    return extract_record(elements), extract_pixels(elements)
