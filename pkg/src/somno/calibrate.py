"""Wake-stage Z-score calibration for EEG from a different instrument or subject."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InsufficientData, ZeroVariance
from .pipeline import EPOCH_SAMPLES


class ProfileSource(str, enum.Enum):
    WakeEpochs = "WakeEpochs"
    WholeNight = "WholeNight"


@dataclass(frozen=True)
class CalibrationProfile:
    mean: float
    std: float
    n_samples: int
    source: ProfileSource = ProfileSource.WakeEpochs

    def __post_init__(self) -> None:
        if not self.std > 0:
            raise ZeroVariance(f"calibration std must be > 0, got {self.std}")
        if self.n_samples < EPOCH_SAMPLES:
            raise InsufficientData(f"profile needs >= {EPOCH_SAMPLES} samples, got {self.n_samples}")

    def to_json(self) -> str:
        return json.dumps({"mean": self.mean, "std": self.std, "n_samples": self.n_samples,
                           "source": self.source.value})

    @classmethod
    def from_json(cls, text: str) -> "CalibrationProfile":
        d = json.loads(text)
        return cls(float(d["mean"]), float(d["std"]), int(d["n_samples"]), ProfileSource(d["source"]))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationProfile":
        return cls.from_json(Path(path).read_text())


def fit_profile(samples, source: ProfileSource = ProfileSource.WakeEpochs) -> CalibrationProfile:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < EPOCH_SAMPLES:
        raise InsufficientData(f"need at least one full epoch ({EPOCH_SAMPLES} samples), got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError("calibration samples must be finite")
    std = float(x.std())
    if std == 0:
        raise ZeroVariance("calibration signal is flat (disconnected electrode?)")
    return CalibrationProfile(float(x.mean()), std, int(x.size), source)


def fit_wake_profile(epochs: Iterable) -> CalibrationProfile:
    """Pool the samples of epochs recorded awake and fit mean/population std."""
    parts = [np.asarray(e, dtype=np.float64).ravel() for e in epochs]
    if not parts:
        raise InsufficientData("no wake epochs given")
    return fit_profile(np.concatenate(parts), ProfileSource.WakeEpochs)


def apply(profile: CalibrationProfile, epoch) -> np.ndarray:
    return (np.asarray(epoch, dtype=np.float64) - profile.mean) / profile.std


def invert(profile: CalibrationProfile, calibrated) -> np.ndarray:
    return np.asarray(calibrated, dtype=np.float64) * profile.std + profile.mean
