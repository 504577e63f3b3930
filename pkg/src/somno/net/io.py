"""SSW1 weight files.

Layout (little-endian): ``b"SSW1"``, u32 config length, UTF-8 JSON config,
u32 tensor count, then per tensor: u16 name length, UTF-8 name, u8 ndim,
ndim x u32 dims, row-major float32 data.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagic, ShapeMismatchWithConfig, TruncatedFile
from .model import ModelConfig, SleepNet

MAGIC = b"SSW1"


def dumps(model: SleepNet) -> bytes:
    cfg = model.config.to_json().encode("utf-8")
    out = [MAGIC, struct.pack("<I", len(cfg)), cfg, struct.pack("<I", len(model.params))]
    for name, arr in model.params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> SleepNet:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise BadMagic(f"not an SSW1 file (magic {data[:4]!r})")
    (cfg_len,) = r.unpack("<I")
    config = ModelConfig.from_dict(json.loads(r.take(cfg_len).decode("utf-8")))
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        dims = r.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(dims)) if dims else 1
        params[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(data):
        raise ShapeMismatchWithConfig(f"{len(data) - r.pos} trailing bytes after the last tensor")
    expected = SleepNet(config, seed=0).param_shapes()
    if list(params) != list(expected):
        raise ShapeMismatchWithConfig(
            f"tensors {list(params)[:4]}... (n={len(params)}) do not match config (n={len(expected)})")
    for name, shape in expected.items():
        if params[name].shape != tuple(shape):
            raise ShapeMismatchWithConfig(f"{name}: shape {params[name].shape} != {shape}")
    return SleepNet(config, params)


def save_weights(model: SleepNet, path) -> None:
    Path(path).write_bytes(dumps(model))


def load_weights(path) -> SleepNet:
    return loads(Path(path).read_bytes())
