"""EDF / EDF+ reader.

Only the subset used by the PhysioNet motor-imagery distribution is
supported: continuous recordings (EDF or EDF+C), 16-bit samples, one common
sample rate for all data signals, and an optional ``EDF Annotations`` signal
carrying timestamped annotation lists (TALs).
"""

from __future__ import annotations

import datetime as dt
import logging
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import (
    MalformedHeader,
    MalformedTal,
    NonMonotoneOnsets,
    TruncatedFile,
    UnsupportedLayout,
)

log = logging.getLogger(__name__)

TASK_LABELS = ("T0", "T1", "T2")
ANNOTATION_LABEL = "EDF Annotations"

# fixed header: (name, width)
_FIXED = (
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("n_records", 8),
    ("record_duration", 8),
    ("n_signals", 4),
)
# per-signal header, stored column-wise: all labels, then all transducers, ...
_PER_SIGNAL = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)

_UNIT_TO_UV = {"uv": 1.0, "µv": 1.0, "mv": 1e3, "v": 1e6, "nv": 1e-3}
_ONSET_RE = re.compile(rb"[+-]\d+(\.\d*)?")
_DURATION_RE = re.compile(rb"\d+(\.\d*)?")
_OVERLAP_TOL = 1e-6


@dataclass(frozen=True)
class SignalHeader:
    label: str
    physical_dimension: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    samples_per_record: int
    transducer: str = ""
    prefilter: str = ""

    @property
    def is_annotation(self) -> bool:
        return self.label == ANNOTATION_LABEL


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_datetime: dt.datetime
    header_bytes: int
    n_records: int
    record_duration_s: Fraction
    n_signals: int
    signals: tuple[SignalHeader, ...]
    reserved: str = ""

    @property
    def record_bytes(self) -> int:
        return 2 * sum(s.samples_per_record for s in self.signals)


@dataclass(frozen=True)
class Annotation:
    onset_s: float
    duration_s: float
    label: str

    @property
    def end_s(self) -> float:
        return self.onset_s + self.duration_s


class AnnotationList(list):
    """A list of :class:`Annotation` that also remembers how many entries
    were dropped (unknown labels, missing durations, out-of-range spans)."""

    def __init__(self, items=(), ignored: int = 0):
        super().__init__(items)
        self.ignored = ignored


@dataclass
class Recording:
    channels: list[str]
    sample_rate_hz: float
    data: np.ndarray  # (n_channels, n_samples), microvolts
    annotations: list[Annotation] = field(default_factory=list)
    subject_id: str = ""
    run_id: str = ""
    n_ignored_annotations: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] != len(self.channels):
            raise ValueError("data must be (n_channels, n_samples)")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


def canonical_channel(name: str) -> str:
    """Case-folded channel name without the dot padding PhysioNet uses
    (``'Fc5.'`` and ``'FC5'`` compare equal)."""
    return name.strip().strip(".").casefold()


# ---------------------------------------------------------------------------
# header

def _ascii(raw: bytes, name: str) -> str:
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise MalformedHeader(f"{name}: non-ASCII bytes") from exc


def _number(text: str, name: str, kind=float):
    try:
        return kind(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise MalformedHeader(f"{name}: not a number: {text!r}") from exc


def _start_datetime(date: str, time: str) -> dt.datetime:
    try:
        day, month, yy = (int(p) for p in date.split("."))
        hh, mm, ss = (int(p) for p in time.split("."))
        year = 1900 + yy if yy >= 85 else 2000 + yy
        return dt.datetime(year, month, day, hh, mm, ss)
    except ValueError as exc:
        raise MalformedHeader(f"bad start date/time {date!r} {time!r}") from exc


def parse_header(data: bytes, file_size: int | None = None) -> EdfHeader:
    """Parse and validate the fixed and per-signal headers.

    ``file_size`` (defaults to ``len(data)``) is used to resolve the ``-1``
    record-count sentinel.
    """
    if len(data) < 256:
        raise TruncatedFile(f"{len(data)} bytes, fixed header needs 256")
    if data[:1] == b"\xff":
        raise UnsupportedLayout("BDF (24-bit) files are not supported")

    fixed = {}
    pos = 0
    for name, width in _FIXED:
        fixed[name] = _ascii(data[pos:pos + width], name)
        pos += width

    if fixed["version"] != "0":
        raise MalformedHeader(f"version: expected '0', got {fixed['version']!r}")
    if fixed["reserved"].startswith("EDF+D"):
        raise UnsupportedLayout("discontinuous EDF+D recordings are not supported")

    header_bytes = _number(fixed["header_bytes"], "header_bytes", int)
    n_records = _number(fixed["n_records"], "n_records", int)
    n_signals = _number(fixed["n_signals"], "n_signals", int)
    try:
        record_duration = Fraction(fixed["record_duration"])
    except (ValueError, ZeroDivisionError) as exc:
        raise MalformedHeader(f"record_duration: not a number: {fixed['record_duration']!r}") from exc

    if n_signals < 1:
        raise MalformedHeader(f"n_signals must be >= 1, got {n_signals}")
    if header_bytes != 256 * (n_signals + 1):
        raise MalformedHeader(
            f"header_bytes={header_bytes} but 256*(n_signals+1)={256 * (n_signals + 1)}")
    if len(data) < header_bytes:
        raise TruncatedFile(f"{len(data)} bytes, header needs {header_bytes}")
    if n_records < -1:
        raise MalformedHeader(f"n_records: {n_records}")
    if record_duration < 0:
        raise MalformedHeader(f"record_duration must be >= 0, got {record_duration}")

    columns = {}
    for name, width in _PER_SIGNAL:
        col = []
        for i in range(n_signals):
            col.append(_ascii(data[pos + i * width:pos + (i + 1) * width], f"signal[{i}].{name}"))
        columns[name] = col
        pos += width * n_signals

    signals = []
    for i in range(n_signals):
        sig = SignalHeader(
            label=columns["label"][i],
            transducer=columns["transducer"][i],
            physical_dimension=columns["physical_dimension"][i],
            physical_min=_number(columns["physical_min"][i], f"signal[{i}].physical_min"),
            physical_max=_number(columns["physical_max"][i], f"signal[{i}].physical_max"),
            digital_min=_number(columns["digital_min"][i], f"signal[{i}].digital_min", int),
            digital_max=_number(columns["digital_max"][i], f"signal[{i}].digital_max", int),
            prefilter=columns["prefilter"][i],
            samples_per_record=_number(columns["samples_per_record"][i],
                                       f"signal[{i}].samples_per_record", int),
        )
        if not sig.digital_min < sig.digital_max:
            raise MalformedHeader(f"signal[{i}]: digital_min >= digital_max")
        if sig.physical_min == sig.physical_max:
            raise MalformedHeader(f"signal[{i}]: physical_min == physical_max")
        if sig.samples_per_record < 1:
            raise MalformedHeader(f"signal[{i}]: samples_per_record < 1")
        signals.append(sig)

    header = EdfHeader(
        version=fixed["version"],
        patient_id=fixed["patient_id"],
        recording_id=fixed["recording_id"],
        start_datetime=_start_datetime(fixed["start_date"], fixed["start_time"]),
        header_bytes=header_bytes,
        n_records=n_records,
        record_duration_s=record_duration,
        n_signals=n_signals,
        signals=tuple(signals),
        reserved=fixed["reserved"],
    )

    size = len(data) if file_size is None else file_size
    if n_records == -1:
        n_records = (size - header_bytes) // header.record_bytes
        header = replace(header, n_records=n_records)
    return header


# ---------------------------------------------------------------------------
# annotations

def parse_annotation_stream(tal_bytes: bytes) -> AnnotationList:
    """Decode EDF+ timestamped annotation lists.

    Only the task labels T0/T1/T2 with a positive duration are kept; every
    other annotation is counted in ``result.ignored``. Timekeeping TALs (no
    annotation text) are skipped silently. Raises :class:`MalformedTal` when
    the delimiter structure is broken and :class:`NonMonotoneOnsets` when
    kept annotations go backwards in time or overlap.
    """
    kept: list[Annotation] = []
    ignored = 0
    for k, chunk in enumerate(bytes(tal_bytes).split(b"\x00")):
        if not chunk:
            continue
        if not chunk.endswith(b"\x14"):
            raise MalformedTal(f"TAL #{k} does not end with 0x14 0x00")
        head, *texts = chunk[:-1].split(b"\x14")
        onset_raw, sep, duration_raw = head.partition(b"\x15")
        if not _ONSET_RE.fullmatch(onset_raw):
            raise MalformedTal(f"TAL #{k}: bad onset {onset_raw!r}")
        if sep and not _DURATION_RE.fullmatch(duration_raw):
            raise MalformedTal(f"TAL #{k}: bad duration {duration_raw!r}")
        labels = [t.decode("utf-8", errors="replace").strip() for t in texts]
        labels = [t for t in labels if t]
        if not labels:
            continue  # timekeeping TAL
        onset = float(onset_raw)
        duration = float(duration_raw) if sep else 0.0
        for label in labels:
            if label not in TASK_LABELS or duration <= 0 or onset < 0:
                ignored += 1
                continue
            if kept:
                prev = kept[-1]
                if onset < prev.onset_s:
                    raise NonMonotoneOnsets(f"onset {onset} after {prev.onset_s}")
                if onset < prev.end_s - _OVERLAP_TOL:
                    raise NonMonotoneOnsets(
                        f"annotation at {onset} overlaps the one ending at {prev.end_s}")
            kept.append(Annotation(onset, duration, label))
    if ignored:
        log.warning("ignored %d annotation(s) outside %s", ignored, "/".join(TASK_LABELS))
    return AnnotationList(kept, ignored)


def _clip_to_recording(annotations: AnnotationList, duration_s: float) -> AnnotationList:
    out = []
    ignored = annotations.ignored
    for a in annotations:
        if a.onset_s >= duration_s:
            ignored += 1
        elif a.end_s > duration_s:
            out.append(Annotation(a.onset_s, duration_s - a.onset_s, a.label))
        else:
            out.append(a)
    return AnnotationList(out, ignored)


# ---------------------------------------------------------------------------
# full file

def parse_edf(data: bytes, subject_id: str = "", run_id: str = "") -> Recording:
    """Parse an EDF/EDF+ byte string into a :class:`Recording`.

    Digital codes are mapped to physical units with each signal's linear
    calibration and then scaled to microvolts when the physical dimension is
    a recognised voltage unit.
    """
    data = bytes(data)
    header = parse_header(data)

    data_idx = [i for i, s in enumerate(header.signals) if not s.is_annotation]
    ann_idx = [i for i, s in enumerate(header.signals) if s.is_annotation]
    rates = {header.signals[i].samples_per_record for i in data_idx}
    if len(rates) > 1:
        raise UnsupportedLayout(f"signals have differing samples per record: {sorted(rates)}")
    if data_idx and header.record_duration_s <= 0:
        raise MalformedHeader("record_duration must be > 0 for data signals")

    need = header.header_bytes + header.n_records * header.record_bytes
    if len(data) < need:
        raise TruncatedFile(f"{len(data)} bytes, header promises {need}")

    total_spr = header.record_bytes // 2
    block = np.frombuffer(data, dtype="<i2", count=header.n_records * total_spr,
                          offset=header.header_bytes).reshape(header.n_records, total_spr)
    offsets = np.concatenate([[0], np.cumsum([s.samples_per_record for s in header.signals])])

    spr = rates.pop() if rates else 1
    rate = float(Fraction(spr) / header.record_duration_s) if data_idx else 1.0
    rows = []
    for i in data_idx:
        sig = header.signals[i]
        digital = block[:, offsets[i]:offsets[i + 1]].reshape(-1).astype(np.float64)
        gain = (sig.physical_max - sig.physical_min) / (sig.digital_max - sig.digital_min)
        physical = sig.physical_min + (digital - sig.digital_min) * gain
        scale = _UNIT_TO_UV.get(sig.physical_dimension.casefold(), 1.0)
        rows.append(physical * scale if scale != 1.0 else physical)
    matrix = np.vstack(rows) if rows else np.zeros((0, 0))
    if not np.all(np.isfinite(matrix)):
        raise MalformedHeader("calibration produced non-finite values")

    tal = b"".join(block[:, offsets[i]:offsets[i + 1]].tobytes() for i in ann_idx)
    annotations = parse_annotation_stream(tal) if ann_idx else AnnotationList()
    annotations = _clip_to_recording(annotations, matrix.shape[1] / rate)

    return Recording(
        channels=[header.signals[i].label for i in data_idx],
        sample_rate_hz=rate,
        data=matrix,
        annotations=list(annotations),
        subject_id=subject_id,
        run_id=run_id,
        n_ignored_annotations=annotations.ignored,
    )


def read_edf(path, subject_id: str = "", run_id: str = "") -> Recording:
    with open(path, "rb") as fh:
        return parse_edf(fh.read(), subject_id=subject_id, run_id=run_id)
