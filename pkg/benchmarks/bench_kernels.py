"""Compare the compiled and numpy kernel backends on training-sized batches.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]

One training step of the default config touches 32 images x 16 patches x 2
views = 1024 patches of 16x16x3.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from shiftmem import kernels


def cases(n, s, rng):
    patches = rng.random((n, s, s, 3))
    gray = rng.random((n, s * s))
    dy = rng.integers(-s // 2, s // 2 + 1, n)
    dx = rng.integers(-s // 2, s // 2 + 1, n)
    sigma = np.where(rng.random(n) < 0.5, rng.uniform(0.1, 1.5, n), 0.0)
    return {
        "entropy": lambda b: kernels.entropy_batch(gray, 256, backend=b),
        "shift": lambda b: kernels.shift_batch(patches, dy, dx, backend=b),
        "blur": lambda b: kernels.blur_batch(patches, sigma, backend=b),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--patches", type=int, default=1024)
    ap.add_argument("--patch-size", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the numpy backend only", file=sys.stderr)
    rng = np.random.default_rng(0)
    results = {}
    print(f"{args.patches} patches of {args.patch_size}x{args.patch_size}x3, best of {args.repeat}")
    print(f"{'kernel':<8} " + " ".join(f"{b + ' ms':>12}" for b in backends) + f" {'speedup':>8}")
    for name, fn in cases(args.patches, args.patch_size, rng).items():
        row = {}
        for b in backends:
            fn(b)  # warm up
            row[b] = min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1e3
        speed = row["python"] / row["compiled"] if "compiled" in row else float("nan")
        results[name] = {**row, "speedup": speed}
        print(f"{name:<8} " + " ".join(f"{row[b]:>12.3f}" for b in backends) + f" {speed:>7.1f}x")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(results, f, indent=1)
    return results


if __name__ == "__main__":
    main()
