"""Stream an EDF channel to a stage server as if it were a live headband."""

from __future__ import annotations

import socket
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from ..edf import read_signal
from ..pipeline import StageLabel
from .protocol import USE_SERVER_DEFAULT, Bye, Data, Hello, Stage, encode_frame, read_frame


@dataclass
class ReplayResult:
    stages: list[Stage] = field(default_factory=list)
    elapsed_s: float = 0.0
    samples_sent: int = 0


def stream_samples(samples, sample_rate_hz: int, host: str, port: int, speed: float = 0.0,
                   calib_epochs: int = USE_SERVER_DEFAULT, device_name: str = "replay",
                   chunk_s: float = 1.0, out: TextIO | None = None) -> ReplayResult:
    """Send HELLO, paced DATA chunks and BYE; collect STAGE frames until the server closes.

    With ``speed > 0`` chunk ``i`` is sent once ``(i + 1) * chunk_s / speed``
    seconds have passed, so a recording takes ``duration / speed`` wall-clock
    seconds. ``speed = 0`` sends as fast as possible.
    """
    x = np.asarray(samples, dtype=np.float32)
    chunk = max(1, int(round(chunk_s * sample_rate_hz)))
    result = ReplayResult()
    sock = socket.create_connection((host, port))
    reader_file = sock.makefile("rb")

    def reader() -> None:
        while True:
            frame = read_frame(reader_file)
            if frame is None:
                return
            if isinstance(frame, Stage):
                result.stages.append(frame)
                if out is not None:
                    print(f"epoch {frame.epoch_index:5d}  {StageLabel(frame.stage).name:<5} "
                          f"conf {frame.confidence:.3f}", file=out, flush=True)

    t = threading.Thread(target=reader, daemon=True)
    t.start()
    t0 = time.perf_counter()
    try:
        sock.sendall(encode_frame(Hello(int(sample_rate_hz), calib_epochs, device_name)))
        for start in range(0, len(x), chunk):
            part = x[start : start + chunk]
            if speed > 0:
                due = t0 + (start + len(part)) / sample_rate_hz / speed
                delay = due - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            sock.sendall(encode_frame(Data(part)))
            result.samples_sent += len(part)
        sock.sendall(encode_frame(Bye()))
        sock.shutdown(socket.SHUT_WR)
        t.join()
    finally:
        result.elapsed_s = time.perf_counter() - t0
        reader_file.close()
        sock.close()
    return result


def replay(edf_path, channel: str, host: str, port: int, speed: float = 0.0,
           calib_epochs: int = USE_SERVER_DEFAULT, out: TextIO | None = sys.stdout) -> ReplayResult:
    rec = read_signal(edf_path, channel)
    rate = rec.sample_rate_hz
    if rate != int(rate):
        raise ValueError(f"sample rate {rate} Hz is not an integer; the wire format needs one")
    return stream_samples(rec.samples, int(rate), host, port, speed, calib_epochs,
                          device_name=str(edf_path).rsplit("/", 1)[-1], out=out)
