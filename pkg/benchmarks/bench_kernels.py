"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Every case also checks that both backends return bit-identical results.
"""

import argparse
import sys
import timeit
from pathlib import Path

import numpy as np

from modelsurgery import _kernels_py, kernels

try:
    from modelsurgery import _ckernels
except ImportError:
    _ckernels = None

CONV_CASES = [
    # (N, H, W, Cin, kh, kw, Cout, stride)
    (1, 8, 8, 3, 1, 1, 7, 1),
    (1, 32, 32, 16, 3, 3, 16, 1),
    (1, 64, 64, 8, 3, 3, 16, 2),
    (1, 16, 16, 64, 1, 1, 64, 1),
]
MATMUL_CASES = [(3, 3, 7), (64, 128, 64), (256, 256, 256)]


def best_of(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def row(label, t_py, t_c):
    speedup = f"{t_py / t_c:8.1f}x" if t_c else "       -"
    c = f"{t_c * 1e3:10.3f}" if t_c else "         -"
    print(f"{label:34s} {t_py * 1e3:10.3f} {c} {speedup}")


def bench_conv(rng, repeat):
    for n, h, w, cin, kh, kw, cout, s in CONV_CASES:
        x = rng.standard_normal((n, h, w, cin)).astype(np.float32)
        f = rng.standard_normal((kh, kw, cin, cout)).astype(np.float32)
        ref = kernels.conv2d_nhwc(x, f, strides=(s, s), impl=_kernels_py)
        t_py = best_of(lambda: kernels.conv2d_nhwc(x, f, strides=(s, s), impl=_kernels_py), repeat)
        t_c = None
        if _ckernels is not None:
            got = kernels.conv2d_nhwc(x, f, strides=(s, s), impl=_ckernels)
            assert np.array_equal(got.view(np.uint32), ref.view(np.uint32)), "conv backends disagree"
            t_c = best_of(lambda: kernels.conv2d_nhwc(x, f, strides=(s, s), impl=_ckernels), repeat)
        row(f"conv {h}x{w}x{cin} k{kh}x{kw}->{cout} s{s}", t_py, t_c)


def bench_matmul(rng, repeat):
    for m, k, n in MATMUL_CASES:
        a = rng.standard_normal((m, k)).astype(np.float32)
        b = rng.standard_normal((k, n)).astype(np.float32)
        ref = kernels.matmul(a, b, impl=_kernels_py)
        t_py = best_of(lambda: kernels.matmul(a, b, impl=_kernels_py), repeat)
        t_c = None
        if _ckernels is not None:
            got = kernels.matmul(a, b, impl=_ckernels)
            assert np.array_equal(got.view(np.uint32), ref.view(np.uint32)), "matmul backends disagree"
            t_c = best_of(lambda: kernels.matmul(a, b, impl=_ckernels), repeat)
        row(f"matmul {m}x{k} @ {k}x{n}", t_py, t_c)


def bench_verify(repeat):
    """pad_to_conv2d + verify_equivalence over a small corpus, with each backend active."""
    sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
    from graphs import pad_corpus

    from modelsurgery import pad_to_conv2d, verify_equivalence

    corpus = [(g, pad_to_conv2d(g)[0]) for g in pad_corpus(20, seed=2024)]

    def work():
        for before, after in corpus:
            verify_equivalence(before, after, n_samples=20)

    saved = kernels._impl
    try:
        kernels._impl = _kernels_py
        t_py = min(timeit.repeat(work, number=1, repeat=repeat))
        t_c = None
        if _ckernels is not None:
            kernels._impl = _ckernels
            t_c = min(timeit.repeat(work, number=1, repeat=repeat))
    finally:
        kernels._impl = saved
    row("verify 20 graphs x 20 samples", t_py, t_c)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if _ckernels is None:
        print("compiled extension not built; only the numpy backend is timed")
    rng = np.random.default_rng(args.seed)
    print(f"{'case':34s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>9s}")
    bench_conv(rng, args.repeat)
    bench_matmul(rng, args.repeat)
    bench_verify(max(1, args.repeat // 2))


if __name__ == "__main__":
    main()
