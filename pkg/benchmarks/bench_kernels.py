"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Kernel timings call both backends in-process. The end-to-end row runs a
short AIS estimate in a subprocess per backend so the import-time choice
is exercised too.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from pohmmkit import kernels

SIZES = [(64, 20, 3), (256, 90, 5), (64, 90, 20)]  # (batch, T, S)

E2E = """
import time, numpy as np
from pohmmkit import ais, kernels
from pohmmkit.data import AlphabetSpec, SequenceDataset
from pohmmkit.product import random_product
rng = np.random.default_rng(0)
a = AlphabetSpec((2,) * 10)
data = SequenceDataset(a, list(rng.integers(0, 2, size=(24, 90, 10))))
p = random_product(data, 2, 3, rng)
t0 = time.perf_counter()
ais.estimate_log_partition(p, 90, 20, ais.AnnealingSchedule.uniform(100), data, rng=0)
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def inputs(B, T, S, rng):
    log_pi = np.log(rng.dirichlet(np.ones(S)))
    log_A = np.log(rng.dirichlet(np.ones(S), size=S))
    log_b = rng.normal(size=(B, T, S))
    return log_pi, log_A, log_b


def bench_kernels(impl, B, T, S, repeat):
    rng = np.random.default_rng(0)
    log_pi, log_A, log_b = inputs(B, T, S, rng)
    alpha, ll = kernels.forward(log_pi, log_A, log_b, impl)
    beta = kernels.backward(log_A, log_b, impl)
    u = rng.random((B, T))
    calls = {
        "forward": lambda: kernels.forward(log_pi, log_A, log_b, impl),
        "backward": lambda: kernels.backward(log_A, log_b, impl),
        "xi_sums": lambda: kernels.xi_sums(alpha, beta, log_A, log_b, ll, impl),
        "backward_sample": lambda: kernels.backward_sample(alpha, log_A, u, impl),
    }
    return {k: min(timeit.repeat(f, number=3, repeat=repeat)) / 3 for k, f in calls.items()}


def end_to_end(pure):
    env = dict(os.environ, POHMMKIT_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", E2E], env=env, capture_output=True, text=True, check=True)
    name, secs = out.stdout.split()
    return name, float(secs)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':<16}{'B,T,S':>14}" + "".join(f"{n + ' ms':>12}" for n in backends) + f"{'speedup':>10}")
    for B, T, S in SIZES:
        res = {n: bench_kernels(m, B, T, S, args.repeat) for n, m in backends.items()}
        for k in res["python"]:
            row = f"{k:<16}{f'{B},{T},{S}':>14}" + "".join(f"{res[n][k] * 1e3:>12.3f}" for n in backends)
            if "cython" in res:
                row += f"{res['python'][k] / res['cython'][k]:>9.1f}x"
            print(row)
    print()
    times = dict(end_to_end(pure) for pure in (True, False))
    for n, t in times.items():
        print(f"AIS end to end ({n}): {t:.2f}s")


if __name__ == "__main__":
    main()
