"""Benchmark the compiled convolution kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Times forward and both backward kernels across representative shapes
(the (T=2048, C=64) row approximates one production-size layer; the
smaller rows match the synthetic-benchmark model).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from adaseg._kernels import available_backends

SHAPES = [
    # (frames, channels, dilation)
    (256, 32, 1),
    (256, 32, 8),
    (1024, 64, 1),
    (1024, 64, 32),
    (2048, 64, 512),
]


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()

    backends = available_backends()
    if "compiled" not in backends:
        print("note: compiled extension not built; timing numpy backend only")
    rng = np.random.default_rng(0)
    header = f"{'shape':>22} {'kernel':>16}" + "".join(f"{n:>12}" for n in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for frames, channels, dilation in SHAPES:
        x = rng.normal(size=(frames, channels))
        w = rng.normal(size=(channels, channels, 3))
        b = rng.normal(size=channels)
        g = rng.normal(size=(frames, channels))
        calls = {
            "forward": lambda impl: impl.conv1d_forward(x, w, b, dilation),
            "backward_input": lambda impl: impl.conv1d_backward_input(g, w, dilation),
            "backward_kernel": lambda impl: impl.conv1d_backward_kernel(g, x, 3, dilation),
        }
        for kernel, call in calls.items():
            times = {name: best_of(lambda: call(impl), args.repeats)
                     for name, impl in backends.items()}
            row = f"{f'T={frames} C={channels} d={dilation}':>22} {kernel:>16}"
            for name in backends:
                row += f"{times[name] * 1e3:>10.3f}ms"
            if len(times) == 2:
                row += f"{times['numpy'] / times['compiled']:>9.2f}x"
            print(row)


if __name__ == "__main__":
    main()
