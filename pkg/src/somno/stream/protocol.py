"""Length-prefixed binary frames for the live EEG stream.

Every frame is ``u8 type | u32 LE payload length | payload``:

========  ====  ==========================================================
HELLO     0x01  u32 sample_rate_hz, u16 calib_epochs, u8 name_len, name
DATA      0x02  u32 n, n x f32 samples
STAGE     0x03  u32 epoch_index, u8 stage, f32 confidence, 5 x f32 probs
BYE       0x04  (empty)
========  ====  ==========================================================

``calib_epochs = 0xFFFF`` in HELLO asks the server to use its default.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Union

import numpy as np

from ..errors import ProtocolError, TruncatedFrame, UnknownFrameType

HELLO, DATA, STAGE, BYE = 0x01, 0x02, 0x03, 0x04
HEADER = struct.Struct("<BI")
USE_SERVER_DEFAULT = 0xFFFF
_STAGE = struct.Struct("<IBf5f")


@dataclass(frozen=True)
class Hello:
    sample_rate_hz: int
    calib_epochs: int = USE_SERVER_DEFAULT
    device_name: str = ""


@dataclass(frozen=True)
class Data:
    samples: np.ndarray

    def __eq__(self, other) -> bool:
        return isinstance(other, Data) and np.array_equal(
            np.asarray(self.samples, dtype="<f4"), np.asarray(other.samples, dtype="<f4"))


@dataclass(frozen=True)
class Stage:
    epoch_index: int
    stage: int
    confidence: float
    probabilities: tuple[float, float, float, float, float]


@dataclass(frozen=True)
class Bye:
    pass


Frame = Union[Hello, Data, Stage, Bye]


def encode_payload(frame: Frame) -> tuple[int, bytes]:
    if isinstance(frame, Hello):
        name = frame.device_name.encode("utf-8")
        if len(name) > 255:
            raise ProtocolError("device name longer than 255 bytes")
        return HELLO, struct.pack("<IHB", frame.sample_rate_hz, frame.calib_epochs, len(name)) + name
    if isinstance(frame, Data):
        s = np.ascontiguousarray(frame.samples, dtype="<f4").ravel()
        return DATA, struct.pack("<I", s.size) + s.tobytes()
    if isinstance(frame, Stage):
        probs = tuple(float(p) for p in frame.probabilities)
        if len(probs) != 5:
            raise ProtocolError("STAGE carries exactly 5 probabilities")
        return STAGE, _STAGE.pack(frame.epoch_index, frame.stage, frame.confidence, *probs)
    if isinstance(frame, Bye):
        return BYE, b""
    raise TypeError(f"not a frame: {frame!r}")


def encode_frame(frame: Frame) -> bytes:
    kind, payload = encode_payload(frame)
    return HEADER.pack(kind, len(payload)) + payload


def decode_payload(kind: int, payload: bytes) -> Frame:
    if kind == HELLO:
        if len(payload) < 7:
            raise TruncatedFrame("HELLO shorter than 7 bytes")
        rate, calib, n = struct.unpack_from("<IHB", payload)
        if len(payload) != 7 + n:
            raise ProtocolError(f"HELLO length {len(payload)} != 7 + name length {n}")
        return Hello(rate, calib, payload[7:].decode("utf-8"))
    if kind == DATA:
        if len(payload) < 4:
            raise TruncatedFrame("DATA shorter than 4 bytes")
        (n,) = struct.unpack_from("<I", payload)
        if len(payload) != 4 + 4 * n:
            raise ProtocolError(f"DATA declares {n} samples but carries {len(payload) - 4} bytes")
        return Data(np.frombuffer(payload, dtype="<f4", count=n, offset=4).copy())
    if kind == STAGE:
        if len(payload) != _STAGE.size:
            raise ProtocolError(f"STAGE payload must be {_STAGE.size} bytes, got {len(payload)}")
        idx, stage, conf, *probs = _STAGE.unpack(payload)
        return Stage(idx, stage, conf, tuple(probs))
    if kind == BYE:
        if payload:
            raise ProtocolError("BYE carries no payload")
        return Bye()
    raise UnknownFrameType(f"unknown frame type 0x{kind:02x}")


def decode_frame(buf: bytes) -> tuple[Frame, int]:
    """Decode the frame at the start of ``buf``; returns it and the bytes consumed."""
    if len(buf) < HEADER.size:
        raise TruncatedFrame(f"need {HEADER.size} header bytes, have {len(buf)}")
    kind, length = HEADER.unpack_from(buf)
    if kind not in (HELLO, DATA, STAGE, BYE):
        raise UnknownFrameType(f"unknown frame type 0x{kind:02x}")
    end = HEADER.size + length
    if len(buf) < end:
        raise TruncatedFrame(f"frame needs {end} bytes, have {len(buf)}")
    return decode_payload(kind, bytes(buf[HEADER.size : end])), end


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> Frame | None:
    """Read one frame from a blocking stream; ``None`` on clean EOF at a frame boundary."""
    head = _read_exact(stream, HEADER.size)
    if not head:
        return None
    if len(head) < HEADER.size:
        raise TruncatedFrame("connection closed inside a frame header")
    kind, length = HEADER.unpack(head)
    if kind not in (HELLO, DATA, STAGE, BYE):
        raise UnknownFrameType(f"unknown frame type 0x{kind:02x}")
    payload = _read_exact(stream, length)
    if len(payload) < length:
        raise TruncatedFrame(f"connection closed after {len(payload)} of {length} payload bytes")
    return decode_payload(kind, payload)
