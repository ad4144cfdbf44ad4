#!/usr/bin/env python3
"""Benchmark the compiled conv kernels against the pure-NumPy fallback.

Times the raw kernels on the layer shapes the reference encoder actually
uses, plus one full loss_gradient step (forward + backward) per backend.

    python3 benchmarks/kernel_bench.py [--frame 64] [--repeat 50]
"""

import argparse
import time

import numpy as np

from uvcg import _kernels_fallback as fallback
from uvcg.encoder import EncoderSpec, ReferenceEncoder
from uvcg.media import FrameImage

try:
    from uvcg import _kernels as compiled
except ImportError:
    compiled = None


def timeit(fn, repeat):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def bench_kernels(frame_size, repeat):
    rng = np.random.default_rng(0)
    cases = [
        ("conv 3->16 s2", (3, frame_size, frame_size), (16, 3, 3, 3), 2),
        ("conv 16->16 s2", (16, frame_size // 2, frame_size // 2), (16, 16, 3, 3), 2),
        ("conv 16->4 1x1", (16, frame_size // 8, frame_size // 8), (4, 16, 1, 1), 1),
    ]
    rows = []
    for name, xshape, wshape, stride in cases:
        x = rng.standard_normal(xshape, dtype=np.float32)
        w = rng.standard_normal(wshape, dtype=np.float32)
        b = rng.standard_normal(wshape[0], dtype=np.float32)
        t_py = timeit(lambda: fallback.conv2d_forward(x, w, b, stride), repeat)
        y = fallback.conv2d_forward(x, w, b, stride)
        dy = rng.standard_normal(y.shape, dtype=np.float32)
        t_py_b = timeit(
            lambda: fallback.conv2d_backward_input(dy, w, stride, xshape[1], xshape[2]),
            repeat,
        )
        if compiled is not None:
            t_c = timeit(lambda: compiled.conv2d_forward(x, w, b, stride), repeat)
            t_c_b = timeit(
                lambda: compiled.conv2d_backward_input(dy, w, stride, xshape[1], xshape[2]),
                repeat,
            )
            same = np.array_equal(
                compiled.conv2d_forward(x, w, b, stride),
                fallback.conv2d_forward(x, w, b, stride),
            )
        else:
            t_c = t_c_b = float("nan")
            same = None
        rows.append((name, t_py, t_c, t_py_b, t_c_b, same))
    return rows


def bench_step(frame_size, repeat, backend):
    # backend choice is made at import; benchmark re-dispatches manually
    enc = ReferenceEncoder(EncoderSpec(kind="reference", seed=7))
    if backend == "python":
        from uvcg import kernels

        saved = kernels._compiled
        kernels._compiled = None
    rng = np.random.default_rng(1)
    frame = FrameImage(rng.random((frame_size, frame_size, 3)).astype(np.float32))
    target = enc.encode(FrameImage(rng.random((frame_size, frame_size, 3)).astype(np.float32)))
    delta = np.zeros((frame_size, frame_size, 3), dtype=np.float32)
    t = timeit(lambda: enc.loss_gradient(frame, delta, target), repeat)
    if backend == "python":
        kernels._compiled = saved
    return t


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frame", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args()

    print(f"frame size {args.frame}x{args.frame}, {args.repeat} repeats")
    print(f"{'kernel':<16} {'python fwd':>11} {'compiled fwd':>13} "
          f"{'python bwd':>11} {'compiled bwd':>13}  bit-equal")
    for name, t_py, t_c, t_py_b, t_c_b, same in bench_kernels(args.frame, args.repeat):
        print(f"{name:<16} {t_py * 1e3:>9.3f}ms {t_c * 1e3:>11.3f}ms "
              f"{t_py_b * 1e3:>9.3f}ms {t_c_b * 1e3:>11.3f}ms  {same}")

    t_py = bench_step(args.frame, args.repeat, "python")
    print(f"\nfull loss_gradient step, python fallback: {t_py * 1e3:.2f} ms")
    if compiled is not None:
        t_c = bench_step(args.frame, args.repeat, "compiled")
        print(f"full loss_gradient step, compiled:        {t_c * 1e3:.2f} ms "
              f"({t_py / t_c:.1f}x speedup)")
    else:
        print("compiled extension not available")


if __name__ == "__main__":
    main()
