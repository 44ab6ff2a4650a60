"""Time the numba and numpy paths of each hot kernel on realistic inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

The numba timings exclude compilation (one warm-up call per kernel).  Both
paths are checked for agreement before timing.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from glaucoscreen import kernels


def cases(rng: np.random.Generator):
    fmap = rng.random((256, 10, 10))
    score = kernels.window_score_map_np(fmap, 3)
    image = rng.random((3, 299, 299))
    luma = rng.random((800, 800))
    return [
        ("window_score_map 256x10x10 k=3", "window_score_map", (fmap, 3)),
        ("local_max_mask 8x8 nms=3", "local_max_mask", (score, 3)),
        ("resize_bilinear 3x299x299 -> 800", "resize_bilinear", (image, 800, 800)),
        ("resize_bilinear 3x800x800 -> 128", "resize_bilinear", (rng.random((3, 800, 800)), 128, 128)),
        ("clahe_luma 800x800 grid 8x8", "clahe_luma", (luma, 2.0, 8, 8)),
    ]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=5, help="timed repetitions per kernel (best is reported)")
    args = parser.parse_args()
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, name, inputs in cases(rng):
        fn_np = getattr(kernels, f"{name}_np")
        fn_nb = getattr(kernels, f"{name}_nb")
        a, b = fn_np(*inputs), fn_nb(*inputs)  # also warms up the jit
        if a.dtype == bool:
            assert np.array_equal(a, b), label
        else:
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-10, err_msg=label)
        t_np = min(timeit.repeat(lambda: fn_np(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn_nb(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:40s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
