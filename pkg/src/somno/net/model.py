"""Time-distributed Base-CNN sleep stager.

Base-CNN, applied with shared weights to every 30 s epoch of a sequence:

    3 x [Conv1D, Conv1D, MaxPool1D, SpatialDropout]
    Conv1D, Conv1D, GlobalMaxPool1D, Dropout, Dense, Dropout

The per-epoch embeddings [b, L, dense_units] then go through a head Conv1D
over the sequence axis (same padding) and a per-position softmax Dense.
All convolutions use ReLU.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch
from .layers import (
    Conv1D,
    Dense,
    Dropout,
    GlobalMaxPool1D,
    MaxPool1D,
    SpatialDropout,
    glorot_uniform,
    softmax,
    softmax_xent,
    softmax_xent_grad,
)


@dataclass(frozen=True)
class ModelConfig:
    input_samples: int = 3000
    block_filters: tuple[int, ...] = (32, 64, 128)
    block_kernels: tuple[int, ...] = (8, 8, 8)
    tail_filters: tuple[int, int] = (256, 256)
    tail_kernels: tuple[int, int] = (8, 8)
    dense_units: int = 64
    dropout_rate: float = 0.01
    pool_size: int = 2
    seq_len: int = 1
    head_filters: int = 128
    head_kernel: int = 3
    head_padding: str = "same"
    classes: int = 5

    def __post_init__(self) -> None:
        for name in ("block_filters", "block_kernels", "tail_filters", "tail_kernels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if len(self.block_filters) != len(self.block_kernels):
            raise ValueError("block_filters and block_kernels differ in length")
        if len(self.tail_filters) != 2 or len(self.tail_kernels) != 2:
            raise ValueError("tail has exactly two conv layers")
        if min(self.block_kernels + self.tail_kernels + (self.head_kernel,)) < 1:
            raise ValueError("kernel sizes must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.pool_size < 1 or self.seq_len < 1 or self.classes < 2:
            raise ValueError("pool_size, seq_len must be >= 1 and classes >= 2")
        if self.head_padding not in ("same", "valid"):
            raise ValueError("head_padding must be 'same' or 'valid'")
        self.length_chain()

    def length_chain(self) -> list[int]:
        """Time length after every Base-CNN layer, starting from the input."""
        t = self.input_samples
        chain = [t]
        for k in self.block_kernels:
            for _ in range(2):
                t = t - k + 1
                chain.append(t)
            t = t // self.pool_size
            chain.append(t)
        for k in self.tail_kernels:
            t = t - k + 1
            chain.append(t)
        if min(chain) < 1:
            raise ShapeMismatch(f"input of {self.input_samples} samples collapses to length < 1: {chain}")
        return chain

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class SleepNet:
    """Model = config + named parameter arrays.

    Parameters are plain numpy arrays in ``self.params`` (insertion order is
    the serialization order). Use :meth:`astype` to get a float64 copy for
    gradient checks.
    """

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0, dtype=np.float32):
        self.config = config
        self.base = self._build_base(config)
        c = config
        self.head = [
            Conv1D("head_conv", c.dense_units, c.head_filters, c.head_kernel, c.head_padding),
            Dense("output", c.head_filters, c.classes, activation="none"),
        ]
        shapes = self.param_shapes()
        if params is None:
            rng = np.random.default_rng(seed)
            params = {}
            for name, shape in shapes.items():
                if name.endswith("/bias"):
                    params[name] = np.zeros(shape, dtype=dtype)
                else:
                    params[name] = glorot_uniform(shape, rng).astype(dtype)
        else:
            if list(params) != list(shapes) or any(params[n].shape != shapes[n] for n in shapes):
                raise ShapeMismatch("parameter names/shapes do not match the config")
        self.params = params

    @staticmethod
    def _build_base(c: ModelConfig):
        layers = []
        c_in = 1
        for bi, (f, k) in enumerate(zip(c.block_filters, c.block_kernels)):
            layers.append(Conv1D(f"block{bi}_conv0", c_in, f, k))
            layers.append(Conv1D(f"block{bi}_conv1", f, f, k))
            layers.append(MaxPool1D(c.pool_size))
            layers.append(SpatialDropout(c.dropout_rate))
            c_in = f
        for ti, (f, k) in enumerate(zip(c.tail_filters, c.tail_kernels)):
            layers.append(Conv1D(f"tail_conv{ti}", c_in, f, k))
            c_in = f
        layers.append(GlobalMaxPool1D())
        layers.append(Dropout(c.dropout_rate))
        layers.append(Dense("embed", c_in, c.dense_units, activation="relu"))
        layers.append(Dropout(c.dropout_rate))
        return layers

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for layer in self.base + self.head:
            shapes.update(layer.param_shapes())
        return shapes

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "SleepNet":
        return SleepNet(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "SleepNet":
        return SleepNet(self.config, {k: v.copy() for k, v in self.params.items()})

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 4 and x.shape[-1] == 1:
            x = x[..., 0]
        if x.ndim == 2:  # [b, T]: one epoch per row
            x = x[:, None, :]
        if x.ndim != 3 or x.shape[2] != self.config.input_samples:
            raise ShapeMismatch(
                f"expected [batch, seq, {self.config.input_samples}(, 1)], got {np.shape(x)}")
        if self.config.head_padding == "valid" and x.shape[1] != self.config.seq_len:
            raise ShapeMismatch(f"valid head padding needs seq_len {self.config.seq_len}")
        return x.astype(self.dtype, copy=False)

    def logits(self, x, rng: np.random.Generator | None = None, tape: list | None = None):
        """Forward pass to logits [b, L, classes].

        Dropout is applied iff ``rng`` is given. Layer contexts are appended
        to ``tape`` when one is passed (needed by :meth:`loss_and_grads`).
        """
        x = self._check_input(x)
        b, seq, t = x.shape
        h = x.reshape(b * seq, t, 1)
        record = tape is not None
        for layer in self.base:
            h, ctx = layer.forward(self.params, h, rng, record)
            if record:
                tape.append(ctx)
        h = h.reshape(b, seq, -1)
        for layer in self.head:
            h, ctx = layer.forward(self.params, h, None, record)
            if record:
                tape.append(ctx)
        return h

    def forward(self, x, rng: np.random.Generator | None = None) -> np.ndarray:
        """Class probabilities [b, L, classes]; training-mode dropout iff ``rng`` is given."""
        return softmax(self.logits(x, rng))

    def loss_and_grads(self, x, labels, rng: np.random.Generator | None = None):
        """Mean cross-entropy, gradients for every parameter, and probabilities.

        Pass ``rng`` for training-mode dropout; the masks drawn in the forward
        pass are reused by the backward pass.
        """
        tape: list = []
        logits = self.logits(x, rng=rng, tape=tape)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.ndim == 1:
            labels = labels[:, None]
        loss, probs = softmax_xent(logits, labels)
        g = softmax_xent_grad(probs, labels).astype(logits.dtype)
        grads: dict[str, np.ndarray] = {}
        layers = self.base + self.head
        n_base = len(self.base)
        for i in range(len(layers) - 1, -1, -1):
            g = layers[i].backward(self.params, tape[i], g, grads)
            if i == n_base:
                # leaving the head: [b, L, D] -> [b*L, D]
                g = g.reshape(-1, g.shape[-1])
        return loss, {k: grads[k] for k in self.params}, probs

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        x = self._check_input(x)
        out = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        if not out:
            return np.zeros((0, x.shape[1], self.config.classes), dtype=self.dtype)
        return np.concatenate(out)
