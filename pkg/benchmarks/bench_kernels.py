"""Time every hot kernel under the numba and the pure-numpy backend.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Sizes follow real use: one night of 100 Hz epochs for the feature kernels,
a training batch of the default model's heaviest layer for convolution.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from somno import _kernels
from somno._kernels import use_backend


def cases(rng: np.random.Generator) -> dict:
    x_conv = rng.standard_normal((8, 355, 256)).astype(np.float32)
    k_conv = (rng.standard_normal((8, 256, 256)) * 0.05).astype(np.float32)
    b_conv = np.zeros(256, np.float32)
    g_conv = rng.standard_normal((8, 348, 256)).astype(np.float32)
    x_pool = rng.standard_normal((32, 2986, 32)).astype(np.float32)
    _, arg = _kernels.maxpool_forward(x_pool, 2)
    g_pool = rng.standard_normal((32, 1493, 32)).astype(np.float32)
    epoch = rng.standard_normal(3000)
    night = np.sort(rng.standard_normal(1000))
    radius = _kernels.kth_neighbor_distance(night, 3)
    raw = rng.standard_normal(30 * 256)
    return {
        "conv1d forward 8x355x256->256": lambda: _kernels.conv1d_valid(x_conv, k_conv, b_conv),
        "conv1d backward 8x355x256->256": lambda: _kernels.conv1d_valid_backward(x_conv, k_conv, g_conv),
        "maxpool forward 32x2986x32": lambda: _kernels.maxpool_forward(x_pool, 2),
        "maxpool backward 32x2986x32": lambda: _kernels.maxpool_backward(g_pool, arg, 2986, 2),
        "mmd 3000 samples": lambda: _kernels.mmd_sum(epoch, 100),
        "kth neighbour N=1000 k=3": lambda: _kernels.kth_neighbor_distance(night, 3),
        "count within N=1000": lambda: _kernels.count_within(night, night, radius),
        "interp 7680 -> 3000": lambda: _kernels.interp_uniform(raw, 2.56, 3000),
    }


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up, includes numba compilation
    n, _ = timeit.Timer(fn).autorange()
    return min(timeit.repeat(fn, number=n, repeat=repeat)) / n


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()

    rows = []
    for name, fn in cases(np.random.default_rng(0)).items():
        timing = {}
        for backend in ("numpy", "numba"):
            with use_backend(backend):
                timing[backend] = best_of(fn, args.repeat)
        rows.append({"kernel": name, **timing, "speedup": timing["numpy"] / timing["numba"]})

    print(f"{'kernel':<34} {'numpy':>11} {'numba':>11} {'speedup':>8}")
    for r in rows:
        print(f"{r['kernel']:<34} {1e3 * r['numpy']:>9.3f}ms {1e3 * r['numba']:>9.3f}ms {r['speedup']:>7.2f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
