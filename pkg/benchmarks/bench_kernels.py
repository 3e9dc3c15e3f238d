"""Compare the numba kernels with their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly, so the CBNET_DISABLE_NUMBA flag does not
matter here. Each row also confirms that the two backends agree exactly.
"""
import argparse
import time

import numpy as np

from cbnet.kernels import _numpy as np_backend

try:
    from cbnet.kernels import _numba as nb_backend
except ImportError:  # numba missing
    nb_backend = None


def _time(fn, repeat):
    fn()  # warm-up (and JIT compile)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    x = rng.standard_normal((8, 202, 202))
    w = rng.standard_normal((8, 8, 3, 3))
    b = rng.standard_normal(8)
    yield "conv2d 8->8 3x3 @202", "conv2d_valid", (x, w, b, 1)
    x = rng.standard_normal((2, 210, 210))
    w = rng.standard_normal((8, 2, 7, 7))
    yield "conv2d 2->8 7x7 @210", "conv2d_valid", (x, w, np.zeros(8), 1)
    x = rng.standard_normal((16, 100, 100))
    w = rng.standard_normal((32, 16, 2, 2))
    yield "conv2d 16->32 2x2/2 @100", "conv2d_valid", (x, w, np.zeros(32), 2)

    mask = rng.random((256, 256)) < 0.5
    offsets = np.array([(dy, dx) for dy in range(-4, 5) for dx in range(-4, 5) if dy * dy + dx * dx <= 16],
                       dtype=np.int64)
    yield "erode disk(4) 256^2", "binary_erode", (mask, offsets)
    yield "dilate disk(4) 256^2", "binary_dilate", (mask, offsets)
    yield "components 256^2", "label_components", (mask, 8)

    blobs = np.zeros((256, 256), dtype=np.int64)
    for k in range(16):
        y, x = divmod(k, 4)
        blobs[20 + 60 * y:40 + 60 * y, 20 + 60 * x:40 + 60 * x] = k + 1
    yield "nearest two, 16 comps", "nearest_two_sqdist", (blobs, 16)


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy ms':>10}{'numba ms':>10}{'speed-up':>10}  equal")
    for label, name, inputs in cases(rng):
        ref = getattr(np_backend, name)
        t_np = _time(lambda: ref(*inputs), args.repeat)
        if nb_backend is None:
            print(f"{label:<28}{t_np * 1e3:>10.2f}{'-':>10}{'-':>10}  -")
            continue
        fast = getattr(nb_backend, name)
        t_nb = _time(lambda: fast(*inputs), args.repeat)
        equal = _same(ref(*inputs), fast(*inputs))
        print(f"{label:<28}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>9.1f}x  {equal}")


if __name__ == "__main__":
    main()
