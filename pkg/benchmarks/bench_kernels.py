"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the best-of-N wall time per call for each backend and the speed-up.
"""

import argparse
import timeit

import numpy as np

from rienhance import _kernels_py

try:
    from rienhance import _kernels as _compiled
except ImportError:
    _compiled = None


def _unit(rng, *shape):
    x = rng.normal(size=shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def cases(rng):
    v, w, c = _unit(rng, 2048, 32), _unit(rng, 256, 32), _unit(rng, 32)
    y = rng.integers(0, 256, 2048).astype(np.int64)
    pooled = rng.normal(size=(256, 2, 16, 16))
    kernel = rng.normal(size=(2, 7, 7))
    grad = rng.normal(size=(256, 16, 16))
    return {
        "proximity_batch 2048x256x32": lambda m: m.proximity_batch(v, w, y, c),
        "conv forward 256x2x16x16 k7": lambda m: m.spatial_conv_forward(pooled, kernel, 0.1),
        "conv backward 256x2x16x16 k7": lambda m: m.spatial_conv_backward(pooled, kernel, grad),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = [("python", _kernels_py)] + ([("compiled", _compiled)] if _compiled else [])
    print(f"{'kernel':32s}" + "".join(f"{name:>14s}" for name, _ in backends) + "   speed-up")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = [min(timeit.repeat(lambda: fn(mod), number=3, repeat=args.repeat)) / 3 for _, mod in backends]
        row = f"{label:32s}" + "".join(f"{t * 1e3:12.2f}ms" for t in times)
        print(row + (f"   {times[0] / times[1]:7.1f}x" if len(times) == 2 else "   (no compiled build)"))


if __name__ == "__main__":
    main()
