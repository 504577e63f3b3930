"""From recordings and hypnograms to labeled, normalized 30 s epochs.

Epochs are kept as parallel numpy arrays in :class:`Epochs` rather than as a
list of objects; iterating an :class:`Epochs` yields :class:`LabeledEpoch`
views for code that wants one epoch at a time.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import re
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.signal import firwin

from . import _kernels
from .edf import Recording, StageAnnotation
from .errors import (
    AllWakeNight,
    AnnotationSignalMismatch,
    BadEpochFile,
    PipelineError,
    TooFewSubjects,
    UnknownLabel,
    UpsamplingRequested,
    ZeroVariance,
)

logger = logging.getLogger(__name__)

EPOCH_SECONDS = 30
TARGET_RATE_HZ = 100
EPOCH_SAMPLES = EPOCH_SECONDS * TARGET_RATE_HZ
ANTIALIAS_TAPS = 63
ANTIALIAS_CUTOFF = 0.45  # fraction of the destination rate


class StageLabel(enum.IntEnum):
    Wake = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4


STAGE_NAMES = [s.name for s in StageLabel]

_STAGE_MAP = {
    "Sleep stage W": StageLabel.Wake,
    "Sleep stage 1": StageLabel.N1,
    "Sleep stage 2": StageLabel.N2,
    "Sleep stage 3": StageLabel.N3,
    "Sleep stage 4": StageLabel.N3,
    "Sleep stage R": StageLabel.REM,
}
_EXCLUDED = {"Movement time", "Sleep stage ?"}


def map_stage_label(text: str) -> StageLabel | None:
    """Map a Sleep-EDF hypnogram string to the five-class scheme.

    Returns ``None`` for excluded annotations (movement, unscored). Stage 4 is
    merged into N3.
    """
    text = text.strip()
    if text in _STAGE_MAP:
        return _STAGE_MAP[text]
    if text in _EXCLUDED:
        return None
    raise UnknownLabel(f"unrecognised stage annotation {text!r}")


@dataclass(frozen=True)
class LabeledEpoch:
    samples: np.ndarray = field(repr=False)
    label: StageLabel
    source_night: int
    epoch_index: int


@dataclass
class Epochs:
    """A set of 30 s epochs as parallel arrays.

    Attributes
    ----------
    samples : ndarray, shape (n, 3000)
    labels : ndarray of uint8, shape (n,)
    nights : ndarray of uint32, shape (n,)
    index : ndarray of int64, shape (n,)
        Position of the epoch on the night's 30 s grid.
    """

    samples: np.ndarray
    labels: np.ndarray
    nights: np.ndarray
    index: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.labels)
        if self.samples.ndim != 2 or self.samples.shape[0] != n:
            raise PipelineError(f"samples shape {self.samples.shape} does not match {n} labels")
        if len(self.nights) != n or len(self.index) != n:
            raise PipelineError("labels, nights and index must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[LabeledEpoch]:
        for i in range(len(self)):
            yield LabeledEpoch(self.samples[i], StageLabel(int(self.labels[i])),
                               int(self.nights[i]), int(self.index[i]))

    def __getitem__(self, key) -> "Epochs":
        if isinstance(key, (int, np.integer)):
            key = slice(key, key + 1)
        return Epochs(self.samples[key], self.labels[key], self.nights[key], self.index[key])

    @classmethod
    def empty(cls, n_samples: int = EPOCH_SAMPLES) -> "Epochs":
        return cls(np.zeros((0, n_samples)), np.zeros(0, np.uint8), np.zeros(0, np.uint32),
                   np.zeros(0, np.int64))

    @classmethod
    def concatenate(cls, parts: Sequence["Epochs"]) -> "Epochs":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            np.concatenate([p.samples for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.nights for p in parts]),
            np.concatenate([p.index for p in parts]),
        )

    def night_ids(self) -> list[int]:
        return sorted({int(n) for n in self.nights})

    def select_nights(self, nights: Iterable[int]) -> "Epochs":
        mask = np.isin(self.nights, np.asarray(list(nights), dtype=np.int64))
        return self[mask]

    def by_night(self) -> Iterator[tuple[int, "Epochs"]]:
        for n in self.night_ids():
            yield n, self[self.nights == n]


def epoch_signal(rec: Recording, annotations: Sequence[StageAnnotation], night_id: int = 0) -> Epochs:
    """Cut a 100 Hz recording into labeled 30 s epochs following the hypnogram.

    Each stage annotation of duration ``d`` yields ``d // 30`` consecutive
    epochs starting at its onset. Excluded stages are skipped, as is any
    epoch that would run past the end of the signal.
    """
    if not math.isclose(rec.sample_rate_hz, TARGET_RATE_HZ):
        raise PipelineError(f"expected {TARGET_RATE_HZ} Hz, got {rec.sample_rate_hz} Hz; resample first")
    n_total = len(rec.samples)
    starts: list[int] = []
    labels: list[int] = []
    index: list[int] = []
    overran = 0
    for ann in annotations:
        stage = map_stage_label(ann.label_text)
        n_epochs = int(ann.duration_s // EPOCH_SECONDS)
        if stage is None:
            continue
        first = int(round(ann.onset_s * TARGET_RATE_HZ))
        grid = int(round(ann.onset_s / EPOCH_SECONDS))
        for e in range(n_epochs):
            start = first + e * EPOCH_SAMPLES
            if start + EPOCH_SAMPLES > n_total:
                overran += n_epochs - e
                break
            starts.append(start)
            labels.append(int(stage))
            index.append(grid + e)
    if overran:
        warnings.warn(f"night {night_id}: {overran} annotated epochs extend past the signal end; dropped",
                      AnnotationSignalMismatch, stacklevel=2)
    if starts:
        idx = np.asarray(starts)[:, None] + np.arange(EPOCH_SAMPLES)[None, :]
        samples = np.asarray(rec.samples, dtype=np.float64)[idx]
    else:
        samples = np.zeros((0, EPOCH_SAMPLES))
    order = np.argsort(np.asarray(index, dtype=np.int64), kind="stable")
    return Epochs(
        samples[order],
        np.asarray(labels, dtype=np.uint8)[order],
        np.full(len(starts), night_id, dtype=np.uint32),
        np.asarray(index, dtype=np.int64)[order],
    )


def trim_wake(epochs: Epochs, boundary_epochs: int = 60) -> Epochs:
    """Drop wake epochs more than ``boundary_epochs`` before sleep onset or after final awakening.

    Positions are measured on the night's 30 s grid (``epochs.index``).
    """
    if boundary_epochs < 0:
        raise ValueError("boundary_epochs must be >= 0")
    sleep = np.flatnonzero(epochs.labels != StageLabel.Wake)
    if len(sleep) == 0:
        warnings.warn("no sleep epochs in night; returned unchanged", AllWakeNight, stacklevel=2)
        return epochs
    first = epochs.index[sleep[0]] - boundary_epochs
    last = epochs.index[sleep[-1]] + boundary_epochs
    keep = (epochs.index >= first) & (epochs.index <= last)
    return epochs[keep]


def antialias_taps(src_rate_hz: float, dst_rate_hz: float, numtaps: int = ANTIALIAS_TAPS) -> np.ndarray:
    return firwin(numtaps, ANTIALIAS_CUTOFF * dst_rate_hz, fs=src_rate_hz, window="hamming")


def resample(samples, src_rate_hz: float, dst_rate_hz: float = TARGET_RATE_HZ,
             antialias: bool = True) -> np.ndarray:
    """Downsample by low-pass filtering then linear interpolation.

    Output sample ``k`` is the (filtered) input interpolated at time
    ``k / dst_rate_hz``; the output holds ``floor(n * dst / src)`` samples.
    The filter is a 63-tap Hamming-windowed sinc at ``0.45 * dst_rate_hz``,
    applied with odd-reflection padding so that edges stay unbiased.
    """
    x = np.asarray(samples, dtype=np.float64)
    if dst_rate_hz <= 0:
        raise ValueError("dst_rate_hz must be > 0")
    if src_rate_hz < dst_rate_hz:
        raise UpsamplingRequested(f"cannot upsample {src_rate_hz} Hz -> {dst_rate_hz} Hz")
    if src_rate_hz == dst_rate_hz:
        return x.copy()
    n_out = int(math.floor(len(x) * dst_rate_hz / src_rate_hz + 1e-9))
    if n_out == 0:
        return np.zeros(0)
    if antialias:
        taps = antialias_taps(src_rate_hz, dst_rate_hz)
        half = len(taps) // 2
        if len(x) > half:
            padded = np.pad(x, half, mode="reflect", reflect_type="odd")
        else:
            padded = np.pad(x, half, mode="edge")
        x = np.convolve(padded, taps, mode="valid")
    return _kernels.interp_uniform(x, src_rate_hz / dst_rate_hz, n_out)


def _moments(samples: np.ndarray) -> tuple[float, float]:
    mu = float(samples.mean())
    sigma = float(samples.std())  # population
    return mu, sigma


def normalize_night(epochs: Epochs) -> Epochs:
    """Z-score every sample with the whole night's mean and population std."""
    if len(epochs) == 0:
        raise PipelineError("cannot normalize an empty night")
    mu, sigma = _moments(epochs.samples)
    if sigma == 0:
        raise ZeroVariance("night has zero variance (dead channel?)")
    return Epochs((epochs.samples - mu) / sigma, epochs.labels, epochs.nights, epochs.index)


def normalize_epochs(epochs: Epochs) -> Epochs:
    """Per-epoch Z-score; flat epochs are left at zero."""
    mu = epochs.samples.mean(axis=1, keepdims=True)
    sigma = epochs.samples.std(axis=1, keepdims=True)
    sigma = np.where(sigma == 0, 1.0, sigma)
    return Epochs((epochs.samples - mu) / sigma, epochs.labels, epochs.nights, epochs.index)


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetSplit:
    train: list[int]
    validation: list[int]
    test: list[int]

    def __post_init__(self) -> None:
        a, b, c = set(self.train), set(self.validation), set(self.test)
        if a & b or a & c or b & c:
            raise PipelineError("train/validation/test nights overlap")

    def to_json(self) -> str:
        return json.dumps({"train": self.train, "validation": self.validation, "test": self.test})

    @classmethod
    def from_json(cls, text: str) -> "DatasetSplit":
        d = json.loads(text)
        return cls([int(x) for x in d["train"]], [int(x) for x in d["validation"]],
                   [int(x) for x in d["test"]])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "DatasetSplit":
        return cls.from_json(Path(path).read_text())


def subject_of(night_id: int) -> int:
    """Subject of a Sleep-EDF night id such as 4001 (subject 400, night 1)."""
    return int(night_id) // 10


def night_id_from_name(name: str) -> int:
    """Night id from a Sleep-EDF file name, e.g. ``SC4001E0-PSG.edf`` -> 4001."""
    m = re.search(r"(?:SC|ST)?(\d{4})", Path(name).name)
    if not m:
        raise ValueError(f"cannot derive a night id from {name!r}")
    return int(m.group(1))


def kfold_split(night_ids: Iterable[int], k: int, fold: int, seed: int = 0,
                validation_fraction: float = 0.1) -> DatasetSplit:
    """Subject-grouped k-fold split.

    Subjects are shuffled with ``seed`` and dealt into ``k`` folds; ``fold``
    is the test fold. Validation takes ``round(validation_fraction * rest)``
    subjects (at least one) from the remaining subjects, chosen by rotating
    through the shuffled order from the test fold onward, so it differs per
    fold.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if not 0 <= fold < k:
        raise ValueError(f"fold must be in [0, {k})")
    nights = sorted({int(n) for n in night_ids})
    subjects = sorted({subject_of(n) for n in nights})
    if k > len(subjects):
        raise TooFewSubjects(f"k={k} exceeds the {len(subjects)} subjects available")
    order = np.random.default_rng(seed).permutation(subjects).tolist()
    folds = [list(map(int, f)) for f in np.array_split(order, k)]
    test_subj = set(folds[fold])
    rest = [s for f in folds[fold + 1 :] + folds[:fold] for s in f]
    n_val = max(1, int(round(validation_fraction * len(rest)))) if len(rest) > 1 else 0
    val_subj = set(rest[:n_val])
    train_subj = set(rest[n_val:])
    pick = lambda group: [n for n in nights if subject_of(n) in group]  # noqa: E731
    return DatasetSplit(pick(train_subj), pick(val_subj), pick(test_subj))


# --------------------------------------------------------------------------
# EPD1 epoch files
# --------------------------------------------------------------------------

EPD_MAGIC = b"EPD1"


def write_epd(path, epochs: Epochs) -> None:
    """Write epochs as EPD1: magic, u32 count, u32 samples/epoch, then
    per epoch u8 label, u32 night id, float32 samples (all little-endian)."""
    n, spe = epochs.samples.shape
    rec = np.dtype([("label", "u1"), ("night", "<u4"), ("samples", "<f4", (spe,))])
    body = np.empty(n, dtype=rec)
    body["label"] = epochs.labels
    body["night"] = epochs.nights
    body["samples"] = epochs.samples
    with open(path, "wb") as fh:
        fh.write(EPD_MAGIC + struct.pack("<II", n, spe))
        fh.write(body.tobytes())


def read_epd(path) -> Epochs:
    """Read an EPD1 file; ``index`` is the running position within each night."""
    data = Path(path).read_bytes()
    if data[:4] != EPD_MAGIC:
        raise BadEpochFile(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 12:
        raise BadEpochFile(f"{path}: truncated header")
    n, spe = struct.unpack_from("<II", data, 4)
    rec = np.dtype([("label", "u1"), ("night", "<u4"), ("samples", "<f4", (spe,))])
    if len(data) != 12 + n * rec.itemsize:
        raise BadEpochFile(f"{path}: expected {12 + n * rec.itemsize} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype=rec, count=n, offset=12)
    labels = body["label"].copy()
    if np.any(labels > max(StageLabel)):
        raise BadEpochFile(f"{path}: label out of range")
    nights = body["night"].astype(np.uint32)
    index = np.zeros(n, dtype=np.int64)
    for night in np.unique(nights):
        m = nights == night
        index[m] = np.arange(m.sum())
    return Epochs(body["samples"].copy(), labels, nights, index)


def read_epd_dir(directory) -> Epochs:
    files = sorted(Path(directory).glob("*.epd"))
    if not files:
        raise BadEpochFile(f"no .epd files in {directory}")
    return Epochs.concatenate([read_epd(f) for f in files])


def prepare_night(rec: Recording, annotations: Sequence[StageAnnotation], night_id: int = 0,
                  boundary_epochs: int | None = 60, per_epoch_norm: bool = False) -> Epochs:
    """Full preprocessing of one night: resample, epoch, trim, normalize."""
    if rec.sample_rate_hz != TARGET_RATE_HZ:
        rec = Recording(rec.channel_label, TARGET_RATE_HZ,
                        resample(rec.samples, rec.sample_rate_hz), rec.clamped)
    epochs = epoch_signal(rec, annotations, night_id)
    if boundary_epochs is not None:
        epochs = trim_wake(epochs, boundary_epochs)
    return normalize_epochs(epochs) if per_epoch_norm else normalize_night(epochs)
