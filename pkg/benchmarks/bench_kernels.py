"""Time the compiled slot kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from raus import kernels
from raus.airlink import SlotSampler
from raus.analysis import subvector_split, synthetic_gradients

# (label, K, L, D, trials per call)
CASES = [
    ("default slot K=500 L=80 D=10", 500, 80, 10, 200),
    ("wide pool   K=200 L=1024 D=16", 200, 1024, 16, 100),
    ("one pool    K=1000 L=32 D=1", 1000, 32, 1, 500),
]


def _inputs(K, L, D, trials, seed=0):
    rng = np.random.default_rng(seed)
    V = synthetic_gradients(K, L, rng)
    norms, units = subvector_split(V, D)
    s = SlotSampler(norms, units, float(norms.max()))
    return s.cum, rng.random((trials, K * D)), s.group, D


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("cython", kernels.compiled_backend))
    else:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'case':34s} {'kernel':13s} " + " ".join(f"{n:>10s}" for n, _ in backends) + "   speedup")
    for label, K, L, D, trials in CASES:
        cum, u, group, G = _inputs(K, L, D, trials)
        calls = {
            "draw_outcomes": lambda b: b.draw_outcomes(cum, u),
            "count_hits": lambda b: b.count_hits(cum, u, group, G),
        }
        for name, call in calls.items():
            ref = call(kernels.python_backend)
            times = []
            for _, backend in backends:
                assert np.array_equal(call(backend), ref)
                times.append(min(timeit.repeat(lambda: call(backend), number=1, repeat=args.repeat)))
            speed = f"{times[0] / times[-1]:8.1f}x" if len(times) > 1 else ""
            print(f"{label:34s} {name:13s} " + " ".join(f"{t * 1e3:8.1f}ms" for t in times) + f" {speed}")


if __name__ == "__main__":
    main()
