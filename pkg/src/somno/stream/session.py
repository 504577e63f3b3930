"""Per-connection streaming state: buffer, calibrate, infer, emit."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..calibrate import CalibrationProfile, apply, fit_wake_profile
from ..errors import DataBeforeHello, NonFiniteSample, ProtocolError
from ..net.model import SleepNet
from ..pipeline import EPOCH_SECONDS, TARGET_RATE_HZ, StageLabel, resample
from .protocol import USE_SERVER_DEFAULT, Bye, Data, Frame, Hello, Stage

logger = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch_index: int
    stage: int
    confidence: float
    probabilities: np.ndarray
    latency_s: float


@dataclass
class Session:
    """One streaming session. Not thread-safe; the model is shared read-only.

    The first ``calib_epochs`` complete epochs are assumed to be wake: they
    fit the calibration profile and are reported as Wake with confidence 1.
    """

    model: SleepNet
    default_calib_epochs: int = 2
    profile: CalibrationProfile | None = None
    device_rate_hz: int | None = None
    device_name: str = ""
    calib_remaining: int = 0
    epoch_counter: int = 0
    closed: bool = False
    records: list[EpochRecord] = field(default_factory=list)
    dropped: list[int] = field(default_factory=list)
    _buffer: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.float32))
    _calib: list[np.ndarray] = field(default_factory=list)

    @property
    def epoch_len(self) -> int:
        return EPOCH_SECONDS * int(self.device_rate_hz)

    def handle(self, frame: Frame) -> list[Stage]:
        if isinstance(frame, Hello):
            return self._hello(frame)
        if isinstance(frame, Data):
            return self.ingest(frame)
        if isinstance(frame, Bye):
            self.closed = True
            return []
        raise ProtocolError(f"unexpected frame from client: {type(frame).__name__}")

    def _hello(self, hello: Hello) -> list[Stage]:
        if self.device_rate_hz is not None:
            raise ProtocolError("duplicate HELLO")
        if hello.sample_rate_hz < TARGET_RATE_HZ:
            raise ProtocolError(f"device rate {hello.sample_rate_hz} Hz below {TARGET_RATE_HZ} Hz")
        self.device_rate_hz = hello.sample_rate_hz
        self.device_name = hello.device_name
        calib = self.default_calib_epochs if hello.calib_epochs == USE_SERVER_DEFAULT else hello.calib_epochs
        self.calib_remaining = calib
        if calib == 0 and self.profile is None:
            raise ProtocolError("calib_epochs is 0 and no calibration profile is loaded")
        logger.info("session %r: %d Hz, %d calibration epochs", self.device_name, self.device_rate_hz, calib)
        return []

    def ingest(self, data: Data) -> list[Stage]:
        """Append samples and process every complete epoch, in order."""
        if self.device_rate_hz is None:
            raise DataBeforeHello("DATA received before HELLO")
        self._buffer = np.concatenate([self._buffer, np.asarray(data.samples, dtype=np.float32)])
        out = []
        n = self.epoch_len
        while len(self._buffer) >= n:
            t0 = time.perf_counter()
            raw, self._buffer = self._buffer[:n], self._buffer[n:]
            stage = self._process(raw.astype(np.float64), t0)
            if stage is not None:
                out.append(stage)
        return out

    def _process(self, raw: np.ndarray, t0: float) -> Stage | None:
        idx = self.epoch_counter
        self.epoch_counter += 1
        if not np.all(np.isfinite(raw)):
            self.dropped.append(idx)
            logger.warning("session %r: epoch %d has non-finite samples; dropped", self.device_name, idx)
            warnings.warn(f"epoch {idx} has non-finite samples; dropped", NonFiniteSample, stacklevel=3)
            return None
        x = resample(raw, self.device_rate_hz, TARGET_RATE_HZ)
        if self.calib_remaining > 0:
            self._calib.append(x)
            self.calib_remaining -= 1
            if self.calib_remaining == 0:
                self.profile = fit_wake_profile(self._calib)
                logger.info("session %r: calibrated mean %.3f std %.3f", self.device_name,
                            self.profile.mean, self.profile.std)
            probs = np.zeros(5, dtype=np.float32)
            probs[StageLabel.Wake] = 1.0
        else:
            z = apply(self.profile, x)
            probs = self.model.forward(z[None, None, :])[0, 0]
        stage = int(np.argmax(probs))
        conf = float(probs[stage])
        latency = time.perf_counter() - t0
        self.records.append(EpochRecord(idx, stage, conf, np.asarray(probs, dtype=np.float32), latency))
        logger.debug("session %r: epoch %d -> %s (%.3f) in %.1f ms", self.device_name, idx,
                     StageLabel(stage).name, conf, 1000 * latency)
        return Stage(idx, stage, conf, tuple(float(p) for p in probs))


def batch_predict(samples, sample_rate_hz: int, model: SleepNet, calib_epochs: int = 2,
                  profile: CalibrationProfile | None = None) -> list[Stage]:
    """Offline counterpart of a streaming session over a whole recording.

    Cuts every complete epoch at once, fits the calibration profile on the
    first ``calib_epochs`` finite epochs, and runs the remaining epochs
    through the model as one batch.
    """
    x = np.asarray(samples, dtype=np.float64)
    n = EPOCH_SECONDS * int(sample_rate_hz)
    n_epochs = len(x) // n
    epochs = x[: n_epochs * n].reshape(n_epochs, n)
    finite = np.all(np.isfinite(epochs), axis=1)
    kept = np.flatnonzero(finite)
    down = np.stack([resample(epochs[i], sample_rate_hz) for i in kept]) if len(kept) else np.zeros((0, 3000))
    calib = kept[:calib_epochs]
    if len(calib):
        profile = fit_wake_profile(down[: len(calib)])
    rest = down[len(calib):]
    out = []
    for i in calib:
        probs = (1.0, 0.0, 0.0, 0.0, 0.0)
        out.append(Stage(int(i), 0, 1.0, probs))
    if len(rest):
        if profile is None:
            raise ProtocolError("no calibration profile")
        z = apply(profile, rest)
        probs = model.predict(z[:, None, :])[:, 0, :]
        for i, p in zip(kept[len(calib):], probs):
            s = int(np.argmax(p))
            out.append(Stage(int(i), s, float(p[s]), tuple(float(v) for v in p)))
    return out
