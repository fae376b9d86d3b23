"""Time the compiled and pure-Python Metropolis kernels on the same problem.

Usage: python3 benchmarks/bench_kernels.py [--steps 20000] [--repeat 3]
"""
import argparse
import math
import timeit

import numpy as np

from evsi_mm._backend import compiled_kernels, python_kernels
from evsi_mm.moment_matching import sqrt_sample_sizes


def problem(seed=0):
    rng = np.random.default_rng(seed)
    n = sqrt_sample_sizes(50, 10, 200).astype(float)
    y = n / (n + 20.0) + 0.02 * rng.standard_normal(n.size)
    sd = float(np.std(y, ddof=1))
    return (n, y, 1.0, 100.0, 40_000.0, sd / 2, sd, 1.0, math.log(2e-6), math.log(1e-9))


def run_block(kernels, args, steps, seed=1):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((steps, 2))
    log_u = np.log(rng.random(steps))
    state = np.array([math.log(20.0), math.log(0.02)])
    out = np.empty((steps, 2))
    return kernels.rwm_block(*args, state, np.diag([0.1, 0.2]), z, log_u, out)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=20_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    prob = problem()
    backends = {"python": python_kernels}
    if compiled_kernels is not None:
        backends["cython"] = compiled_kernels
    else:
        print("compiled extension not built; timing the fallback only")
    timings = {}
    for name, k in backends.items():
        best = min(timeit.repeat(lambda: run_block(k, prob, args.steps), number=1,
                                 repeat=args.repeat))
        timings[name] = best
        print(f"{name:>7}: {args.steps} steps in {best:.4f} s "
              f"({1e6 * best / args.steps:.2f} us/step)")
    if len(timings) == 2:
        print(f"speed-up: {timings['python'] / timings['cython']:.1f}x")


if __name__ == "__main__":
    main()
