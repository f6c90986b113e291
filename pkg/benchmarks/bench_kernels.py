"""Compare the compiled and numpy kernel backends on desk-scale workloads.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints per-call times, the speedup, and the largest disagreement between
backends for each kernel, then times one full learning run per backend.
"""
import argparse
import importlib
import os
import subprocess
import sys
import timeit

import numpy as np

from sdce import _kernels_py
from sdce.market import bundle_grid


def workloads(rng):
    cells = bundle_grid(8)
    phi = rng.uniform(size=8)
    logits = rng.normal(size=len(cells))
    loo = _kernels_py.loo_matrix(cells, phi, 1.0, 1.0, 0.2, 0.1)
    h = np.full(8, 1e-3)
    return {
        "loo_matrix": lambda k: k.loo_matrix(cells, phi, 1.0, 1.0, 0.2, 0.1),
        "price_gradients": lambda k: k.price_gradients(logits, cells, 1.0, 500.0, loo, 1.0, h),
        "gaussian_flow": lambda k: np.array(k.gaussian_flow(0.5, 0.4, 0.0, 1.0, 0.5, 0.24, 0.6, 0.01, 5000)),
    }


RUN = ("import time;from sdce.pmir import PmirConfig,pmir_run;from sdce.market import ElasticitySchedule;"
       "t=time.perf_counter();pmir_run(PmirConfig(seed=17),ElasticitySchedule());print(time.perf_counter()-t)")


def full_run(backend):
    env = dict(os.environ, SDCE_KERNELS=backend)
    out = subprocess.run([sys.executable, "-c", RUN], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    try:
        fast = importlib.import_module("sdce._kernels")
    except ImportError:
        sys.exit("compiled backend not built; run `pip install -e . --no-build-isolation`")
    slow = _kernels_py
    print(f"{'kernel':<16}{'compiled ms':>12}{'numpy ms':>10}{'speedup':>9}{'max |diff|':>12}")
    for name, call in workloads(np.random.default_rng(0)).items():
        tf = timeit.timeit(lambda: call(fast), number=args.repeat) / args.repeat
        ts = timeit.timeit(lambda: call(slow), number=args.repeat) / args.repeat
        diff = float(np.max(np.abs(np.asarray(call(fast)) - np.asarray(call(slow)))))
        print(f"{name:<16}{tf * 1e3:>12.3f}{ts * 1e3:>10.3f}{ts / tf:>9.1f}{diff:>12.2e}")
    tc, tp = full_run("cython"), full_run("python")
    print(f"\nfull desk run   compiled {tc:.2f}s  numpy {tp:.2f}s  speedup {tp / tc:.1f}")


if __name__ == "__main__":
    main()
