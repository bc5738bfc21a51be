#!/usr/bin/env python3
"""Benchmark the numba conv kernels against the pure-numpy fallback.

Runs both backends in-process (the dispatch module is bypassed so one run
covers both) over conv shapes drawn from the reference nets, then times a
whole-model forward per backend via subprocesses with GHOSTFORGE_BACKEND
set.

    python benchmarks/bench_backends.py
    python benchmarks/bench_backends.py --repeat 5 --batch 8
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from ghostforge.kernels import numba_backend, numpy_backend
from ghostforge.rng import GaussianStream

CASES = [
    # label, (N, C, H, W), (Cout, Cg, k), stride, pad, groups
    ("stem 3->16 k3 s2 @224", (8, 3, 224, 224), (16, 3, 3), 2, 1, 1),
    ("pointwise 64->128 @28", (8, 64, 28, 28), (128, 64, 1), 1, 0, 1),
    ("conv3x3 64->64 @32", (8, 64, 32, 32), (64, 64, 3), 1, 1, 1),
    ("depthwise 96 k3 @28", (8, 96, 28, 28), (96, 1, 3), 1, 1, 96),
    ("conv3x3 256->256 @8", (8, 256, 8, 8), (256, 256, 3), 1, 1, 1),
]


def _time(fn, *args, repeat):
    fn(*args)   # warmup / JIT
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.mean(times))


def bench_kernels(repeat: int) -> None:
    print(f"{'case':28s} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    for label, xshape, (cout, cg, k), stride, pad, groups in CASES:
        x = GaussianStream(1).normal(xshape)
        w = GaussianStream(2).normal((cout, cg, k, k), std=0.1)
        t_np = _time(numpy_backend.conv2d_forward, x, w, stride, pad, groups,
                     repeat=repeat)
        t_nb = _time(numba_backend.conv2d_forward, x, w, stride, pad, groups,
                     repeat=repeat)
        a = numpy_backend.conv2d_forward(x, w, stride, pad, groups)
        b = numba_backend.conv2d_forward(x, w, stride, pad, groups)
        assert np.allclose(a, b, rtol=1e-10, atol=1e-10), label
        print(f"{label:28s} {t_np * 1e3:12.2f} {t_nb * 1e3:12.2f} "
              f"{t_np / t_nb:8.2f}x")


def bench_model(batch: int, repeat: int) -> None:
    print(f"\nwhole-model forward, resnet56 @32x32, batch {batch}:")
    for backend in ("numpy", "numba"):
        env = dict(os.environ, GHOSTFORGE_BACKEND=backend)
        out = subprocess.run(
            [sys.executable, "-m", "ghostforge.cli", "bench", "--arch",
             "resnet56", "--batch", str(batch), "--repeat", str(repeat)],
            capture_output=True, text=True, env=env)
        line = out.stdout.strip().splitlines()[-1] if out.stdout else out.stderr
        print(f"  {backend:6s} {line}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args()
    bench_kernels(args.repeat)
    bench_model(args.batch, args.repeat)
    return 0


if __name__ == "__main__":
    sys.exit(main())
