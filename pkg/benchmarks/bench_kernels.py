"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from varganlab import data
from varganlab.kernels import _fallback

try:
    from varganlab.kernels import _kernels
except ImportError:
    _kernels = None


def cases():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(120, 16))
    feats, kern = _fallback.minibatch_forward(h)
    g = rng.normal(size=120)
    x = rng.uniform(-1.5, 1.5, size=(26_000, 2))
    centers = data.grid_spec(5).centers
    designs = data.enumerate_designs(9).reshape(-1, 9, 9).astype(np.uint8)
    return {
        "minibatch_forward 120x16": lambda m: m.minibatch_forward(h),
        "minibatch_backward 120x16": lambda m: m.minibatch_backward(h, kern, g),
        "nearest_centers 26000x25": lambda m: m.nearest_centers(x, centers),
        "classify_images 32768 (8-conn)": lambda m: m.classify_images(designs, True),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = {"python": _fallback}
    if _kernels is not None:
        impls["cython"] = _kernels
    else:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'kernel':34s}" + "".join(f"{k:>12s}" for k in impls) + "     speedup")
    for name, fn in cases().items():
        times = {}
        for label, mod in impls.items():
            fn(mod)  # warm up
            number = 1 if "classify" in name and label == "python" else 10
            times[label] = min(timeit.repeat(lambda: fn(mod), number=number,
                                             repeat=args.repeat)) / number
        row = f"{name:34s}" + "".join(f"{t * 1e3:10.3f}ms" for t in times.values())
        if "cython" in times:
            row += f"   {times['python'] / times['cython']:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
