"""Finite-difference gradient checking that is aware of ReLU and max-pool kinks.

The network is piecewise smooth: every ReLU mask and max-pool winner fixes
one smooth piece. A central difference whose stencil ``w +- h`` crosses
into another piece is not an estimate of the gradient at ``w``, so such
"kink" entries are re-checked with the largest smaller step whose stencil
stays on the same piece.

The network itself runs in float64. Only the final softmax cross-entropy of
the finite-difference oracle is evaluated in ``np.longdouble``: the loss
change across a 1e-4 stencil can be a few float64 ulps of the loss, which
would otherwise cap the attainable relative accuracy for small gradients.
On platforms where ``longdouble`` is plain float64 this is a no-op.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import SleepNet


@dataclass
class GradEntry:
    name: str
    index: int
    analytic: float
    numeric: float
    step: float
    rel_error: float
    kink: bool


@dataclass
class GradCheckResult:
    entries: list[GradEntry] = field(default_factory=list)
    raw_max_rel_error: float = 0.0  # every entry at the base step, kinks included
    unresolved: list[GradEntry] = field(default_factory=list)

    @property
    def n_checked(self) -> int:
        return len(self.entries)

    @property
    def kinks(self) -> list[GradEntry]:
        return [e for e in self.entries if e.kink]

    @property
    def max_rel_error(self) -> float:
        """Worst error over entries evaluated on a single smooth piece."""
        resolved = [e.rel_error for e in self.entries if not (e.kink and e in self.unresolved)]
        return max(resolved, default=0.0)


def relative_error(a: float, b: float, floor: float = 1e-12) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _pattern(tape: list) -> list[np.ndarray]:
    out = []
    for ctx in tape:
        for item in ctx if isinstance(ctx, tuple) else (ctx,):
            if isinstance(item, np.ndarray) and (item.dtype == bool or np.issubdtype(item.dtype, np.integer)):
                out.append(item.copy())
    return out


def activation_pattern(model: SleepNet, x, seed: int | None) -> list[np.ndarray]:
    """ReLU masks and max-pool winners of one forward pass."""
    tape: list = []
    model.logits(x, rng=None if seed is None else np.random.default_rng(seed), tape=tape)
    return _pattern(tape)


def extended_xent(logits: np.ndarray, labels: np.ndarray) -> np.longdouble:
    """Mean cross-entropy of float64 logits, accumulated in extended precision."""
    z = np.asarray(logits, dtype=np.longdouble)
    m = z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z - m).sum(axis=-1)) + m[..., 0]
    picked = np.take_along_axis(z, labels[..., None], axis=-1)[..., 0]
    return (lse - picked).mean()


def _same(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def check_gradients(model: SleepNet, x, labels, h: float = 1e-4, dropout_seed: int | None = 7,
                    smaller_steps=(1e-5, 1e-6, 1e-7), names=None) -> GradCheckResult:
    """Compare analytic gradients with central differences, entry by entry.

    ``model`` should be float64. ``dropout_seed`` fixes the dropout masks so
    that every loss evaluation sees the same network; ``None`` disables
    dropout.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim == 1:
        labels = labels[:, None]

    def evaluate():
        tape: list = []
        rng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
        logits = model.logits(x, rng=rng, tape=tape)
        return extended_xent(logits, labels), _pattern(tape)

    rng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
    _, grads, _ = model.loss_and_grads(x, labels, rng=rng)
    _, base = evaluate()
    result = GradCheckResult()
    for name in names or list(model.params):
        flat = model.params[name].reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            w0 = flat[i]

            def central(step: float) -> tuple[float, bool]:
                flat[i] = w0 + step
                lp, pp = evaluate()
                flat[i] = w0 - step
                lm, pm = evaluate()
                flat[i] = w0
                return float((lp - lm) / (2 * step)), _same(pp, base) and _same(pm, base)

            num, stable = central(h)
            err = relative_error(float(g[i]), num)
            result.raw_max_rel_error = max(result.raw_max_rel_error, err)
            entry = GradEntry(name, i, float(g[i]), num, h, err, kink=not stable)
            if not stable:
                for step in smaller_steps:
                    num, stable = central(step)
                    if stable:
                        entry.numeric, entry.step = num, step
                        entry.rel_error = relative_error(float(g[i]), num)
                        break
                if not stable:
                    result.unresolved.append(entry)
            result.entries.append(entry)
    return result
