"""EDF / EDF+ reading: headers, 16-bit signals, and TAL annotations.

Only what Sleep-EDF needs is supported: 16-bit little-endian samples (no BDF),
continuous records, and "EDF Annotations" signals decoded into
:class:`StageAnnotation` entries.
"""

from __future__ import annotations

import logging
import os
import re
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np

from .errors import (
    ChannelNotFound,
    DegenerateScale,
    MalformedField,
    MalformedTal,
    TruncatedHeader,
    TruncatedRecord,
)

logger = logging.getLogger(__name__)

ANNOTATION_LABEL = "EDF Annotations"

# (name, width) of the fixed part of the header
_FIXED_FIELDS = (
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("data_record_count", 8),
    ("record_duration_s", 8),
    ("signal_count", 4),
)

# per-signal fields, stored column-wise in the header
_SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dim", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefiltering", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)

_ONSET_RE = re.compile(rb"^[+-]\d+(\.\d*)?$")
_DURATION_RE = re.compile(rb"^\d+(\.\d*)?$")


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_date: str
    start_time: str
    header_bytes: int
    data_record_count: int
    record_duration_s: float
    signal_count: int
    reserved: str = ""


@dataclass(frozen=True)
class SignalSpec:
    label: str
    transducer: str
    physical_dim: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    prefiltering: str
    samples_per_record: int
    reserved: str = ""

    @property
    def is_annotation(self) -> bool:
        return self.label == ANNOTATION_LABEL


@dataclass(frozen=True)
class Recording:
    """One channel in physical units (usually µV)."""

    channel_label: str
    sample_rate_hz: float
    samples: np.ndarray = field(repr=False)
    clamped: int = 0

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class StageAnnotation:
    onset_s: float
    duration_s: float
    label_text: str


def _text(raw: bytes) -> str:
    try:
        return raw.decode("ascii").rstrip(" \x00")
    except UnicodeDecodeError as exc:
        raise MalformedField(f"non-ASCII header field {raw!r}") from exc


def _int(raw: bytes, name: str) -> int:
    s = _text(raw).strip()
    try:
        return int(s)
    except ValueError:
        # some writers put "30.0" in integer slots
        try:
            value = float(s)
        except ValueError:
            raise MalformedField(f"{name}: expected integer, got {s!r}") from None
        if value != int(value):
            raise MalformedField(f"{name}: expected integer, got {s!r}")
        return int(value)


def _float(raw: bytes, name: str) -> float:
    s = _text(raw).strip()
    try:
        return float(s)
    except ValueError:
        raise MalformedField(f"{name}: expected number, got {s!r}") from None


def parse_header(data: bytes) -> tuple[EdfHeader, list[SignalSpec]]:
    """Parse the fixed header and every signal header.

    Parameters
    ----------
    data : bytes
        At least the full header (``256 * (signal_count + 1)`` bytes); extra
        trailing bytes are ignored.

    Returns
    -------
    header : EdfHeader
    signals : list of SignalSpec
    """
    if len(data) < 256:
        raise TruncatedHeader(f"need 256 bytes for the fixed header, got {len(data)}")
    raw = {}
    pos = 0
    for name, width in _FIXED_FIELDS:
        raw[name] = data[pos : pos + width]
        pos += width
    ns = _int(raw["signal_count"], "signal_count")
    if ns < 0:
        raise MalformedField(f"signal_count must be >= 0, got {ns}")
    header_bytes = _int(raw["header_bytes"], "header_bytes")
    expected = 256 * (ns + 1)
    if len(data) < expected:
        raise TruncatedHeader(f"header declares {ns} signals ({expected} bytes), got {len(data)}")
    if header_bytes != expected:
        logger.warning("header_bytes field %d disagrees with 256*(ns+1)=%d; using the latter",
                       header_bytes, expected)
    header = EdfHeader(
        version=_text(raw["version"]),
        patient_id=_text(raw["patient_id"]),
        recording_id=_text(raw["recording_id"]),
        start_date=_text(raw["start_date"]),
        start_time=_text(raw["start_time"]),
        header_bytes=expected,
        data_record_count=_int(raw["data_record_count"], "data_record_count"),
        record_duration_s=_float(raw["record_duration_s"], "record_duration_s"),
        signal_count=ns,
        reserved=_text(raw["reserved"]),
    )

    columns: dict[str, list[bytes]] = {}
    for name, width in _SIGNAL_FIELDS:
        columns[name] = [data[pos + i * width : pos + (i + 1) * width] for i in range(ns)]
        pos += width * ns

    signals = []
    for i in range(ns):
        c = {name: columns[name][i] for name, _ in _SIGNAL_FIELDS}
        signals.append(
            SignalSpec(
                label=_text(c["label"]),
                transducer=_text(c["transducer"]),
                physical_dim=_text(c["physical_dim"]),
                physical_min=_float(c["physical_min"], "physical_min"),
                physical_max=_float(c["physical_max"], "physical_max"),
                digital_min=_int(c["digital_min"], "digital_min"),
                digital_max=_int(c["digital_max"], "digital_max"),
                prefiltering=_text(c["prefiltering"]),
                samples_per_record=_int(c["samples_per_record"], "samples_per_record"),
                reserved=_text(c["reserved"]),
            )
        )
        if signals[-1].samples_per_record < 1:
            raise MalformedField(f"signal {i}: samples_per_record must be > 0, "
                                 f"got {signals[-1].samples_per_record}")
    return header, signals


def _check_scale(spec: SignalSpec) -> None:
    if spec.digital_max <= spec.digital_min:
        raise DegenerateScale(f"{spec.label}: digital range [{spec.digital_min}, {spec.digital_max}] is empty")
    if spec.physical_max == spec.physical_min:
        raise DegenerateScale(f"{spec.label}: physical_min == physical_max == {spec.physical_min}")


def _to_physical(d, spec: SignalSpec):
    # endpoints map exactly onto the physical bounds
    span = (spec.physical_max - spec.physical_min) / (spec.digital_max - spec.digital_min)
    out = spec.physical_min + (d - spec.digital_min) * span
    out = np.where(d == spec.digital_max, spec.physical_max, out)
    return np.where(d == spec.digital_min, spec.physical_min, out)


def digital_to_physical(d: int, spec: SignalSpec) -> float:
    """Map one digital value to physical units, clamping to the digital range."""
    _check_scale(spec)
    d = min(max(int(d), spec.digital_min), spec.digital_max)
    return float(_to_physical(d, spec))


Source = Union[str, os.PathLike, bytes, "EdfFile"]


class EdfFile:
    """A parsed EDF file held in memory.

    Construct with :meth:`open` from a path or raw bytes. The object is
    immutable after construction.
    """

    def __init__(self, data: bytes, name: str = "<bytes>"):
        self.name = name
        header, signals = parse_header(data)
        self.signals = signals
        self._offsets = np.cumsum([0] + [s.samples_per_record for s in signals])
        self.record_samples = int(self._offsets[-1])
        record_bytes = 2 * self.record_samples
        body = len(data) - header.header_bytes
        n = header.data_record_count
        if record_bytes == 0:
            n = max(n, 0)
        elif n == -1:
            if body % record_bytes:
                raise TruncatedRecord(
                    f"{name}: {body} data bytes is not a whole number of {record_bytes}-byte records"
                )
            n = body // record_bytes
        elif n < 0:
            raise MalformedField(f"data_record_count must be >= -1, got {n}")
        elif body < n * record_bytes:
            raise TruncatedRecord(
                f"{name}: header declares {n} records ({n * record_bytes} bytes) but only {body} bytes follow"
            )
        if n != header.data_record_count:
            header = replace(header, data_record_count=n)
        has_data_signal = any(not s.is_annotation for s in signals)
        if has_data_signal and header.record_duration_s <= 0:
            raise MalformedField(f"record_duration_s must be > 0, got {header.record_duration_s}")
        self.header = header
        self._records = np.frombuffer(
            data, dtype="<i2", count=n * self.record_samples, offset=header.header_bytes
        ).reshape(n, self.record_samples)

    @classmethod
    def open(cls, source: Source) -> "EdfFile":
        if isinstance(source, EdfFile):
            return source
        if isinstance(source, (bytes, bytearray, memoryview)):
            return cls(bytes(source))
        path = Path(source)
        return cls(path.read_bytes(), name=str(path))

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.signals]

    def _index(self, label: str) -> int:
        hits = [i for i, s in enumerate(self.signals) if s.label == label]
        if len(hits) != 1:
            raise ChannelNotFound(
                f"{self.name}: channel {label!r} matched {len(hits)} signals; available: {self.labels}"
            )
        return hits[0]

    def digital(self, label: str) -> np.ndarray:
        """Raw int16 samples of one channel, all records concatenated."""
        i = self._index(label)
        return self._records[:, self._offsets[i] : self._offsets[i + 1]].reshape(-1).copy()

    def record_bytes(self, index: int) -> list[bytes]:
        """Raw bytes of signal ``index`` for every record (used for annotation signals)."""
        sl = self._records[:, self._offsets[index] : self._offsets[index + 1]]
        return [row.tobytes() for row in sl]

    def sample_rate(self, label: str) -> float:
        spec = self.signals[self._index(label)]
        return spec.samples_per_record / self.header.record_duration_s


def read_signal(source: Source, channel_label: str) -> Recording:
    """Read one channel in physical units.

    Out-of-range digital values are clamped to ``[digital_min, digital_max]``
    and counted in ``Recording.clamped``.
    """
    edf = EdfFile.open(source)
    spec = edf.signals[edf._index(channel_label)]
    if spec.is_annotation:
        raise ChannelNotFound(f"{channel_label!r} is an annotation signal")
    _check_scale(spec)
    dig = edf.digital(channel_label).astype(np.int64)
    out_of_range = (dig < spec.digital_min) | (dig > spec.digital_max)
    clamped = int(out_of_range.sum())
    if clamped:
        logger.warning("%s: clamped %d out-of-range samples in %s", edf.name, clamped, channel_label)
        dig = np.clip(dig, spec.digital_min, spec.digital_max)
    samples = _to_physical(dig.astype(np.float64), spec)
    return Recording(
        channel_label=channel_label,
        sample_rate_hz=edf.sample_rate(channel_label),
        samples=samples,
        clamped=clamped,
    )


def parse_tal_record(raw: bytes) -> list[StageAnnotation]:
    """Decode the time-stamped annotation lists of one annotation record.

    Timekeeping TALs (no annotation text) are skipped.
    """
    out = []
    body = raw.rstrip(b"\x00")
    if not body:
        return out
    for chunk in body.split(b"\x00"):
        if not chunk:
            continue
        if not chunk.endswith(b"\x14"):
            raise MalformedTal(f"TAL not terminated by 0x14 0x00: {chunk[:40]!r}")
        parts = chunk[:-1].split(b"\x14")
        stamp, texts = parts[0], parts[1:]
        onset_raw, _, duration_raw = stamp.partition(b"\x15")
        if not _ONSET_RE.match(onset_raw):
            raise MalformedTal(f"bad onset {onset_raw!r}")
        duration_raw = duration_raw.strip()
        if duration_raw and not _DURATION_RE.match(duration_raw):
            raise MalformedTal(f"bad duration {duration_raw!r}")
        onset = float(onset_raw)
        duration = float(duration_raw) if duration_raw else 0.0
        for t in texts:
            if t:
                out.append(StageAnnotation(onset, duration, t.decode("utf-8", errors="replace")))
    return out


def parse_annotations(source: Source) -> list[StageAnnotation]:
    """All annotations of an EDF+ file, sorted by onset (stable)."""
    edf = EdfFile.open(source)
    idx = [i for i, s in enumerate(edf.signals) if s.is_annotation]
    if not idx:
        raise ChannelNotFound(f"{edf.name}: no {ANNOTATION_LABEL!r} signal")
    anns: list[StageAnnotation] = []
    for i in idx:
        for rec in edf.record_bytes(i):
            anns.extend(parse_tal_record(rec))
    anns.sort(key=lambda a: a.onset_s)
    for a in anns:
        if a.label_text.startswith("Sleep stage") and a.duration_s % 30:
            warnings.warn(f"stage annotation at {a.onset_s}s has duration {a.duration_s}s, not a multiple of 30",
                          stacklevel=2)
    return anns
