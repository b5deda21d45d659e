"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N time of each backend, then an
end-to-end training run under each value of COGFACTOR_BACKEND (run in a
subprocess, since the backend is chosen at import time).
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cogfactor._kernels import numba_kernels, numpy_kernels

TRAIN_SNIPPET = """
import time, numpy as np
from cogfactor.model import FactoredModel
from cogfactor.optim import TrainConfig, train
rng = np.random.default_rng(0)
data = {f"s{i}": (rng.standard_normal((400, 208)), rng.integers(0, 12, 400)) for i in range(4)}
model = FactoredModel.initialize(208, 100, {k: 12 for k in data}, rng=0)
train(model, data, TrainConfig(max_iterations=20))
t = time.perf_counter()
train(model, data, TrainConfig(max_iterations=2000))
print(time.perf_counter() - t)
"""


def cases(rng):
    scores = rng.standard_normal((256, 23)) * 5
    labels = rng.integers(0, 23, 256)
    param, grad = rng.standard_normal((208, 100)), rng.standard_normal((208, 100))
    Z, C = rng.standard_normal((5000, 208)), rng.standard_normal((50, 208))
    assign = rng.integers(0, 50, 5000)
    return {
        "softmax_xent 256x23": ("softmax_xent", lambda k: k.softmax_xent(scores, labels)),
        "softmax_rows 256x23": ("softmax_rows", lambda k: k.softmax_rows(scores)),
        "adam_update 208x100": ("adam_update", lambda k: k.adam_update(
            param, grad, np.zeros_like(param), np.zeros_like(param), 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)),
        "kmeans_assign 5000x208, k=50": ("kmeans_assign", lambda k: k.kmeans_assign(Z, C)),
        "kmeans_sums 5000x208, k=50": ("kmeans_sums", lambda k: k.kmeans_sums(Z, assign, 50)),
    }


def best_of(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if numba_kernels is None:
        sys.exit("numba is not installed; nothing to compare")
    print(f"{'kernel':32s} {'numpy':>12s} {'numba':>12s} {'speedup':>8s}")
    for label, (_, call) in cases(np.random.default_rng(0)).items():
        call(numba_kernels)  # compile outside the timed region
        t_np = best_of(lambda: call(numpy_kernels), args.repeat)
        t_nb = best_of(lambda: call(numba_kernels), args.repeat)
        print(f"{label:32s} {t_np * 1e6:10.1f}us {t_nb * 1e6:10.1f}us {t_np / t_nb:7.2f}x")
    for backend in ("numpy", "numba"):
        env = dict(os.environ, COGFACTOR_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True, check=True)
        print(f"train 2000 iterations ({backend}): {float(out.stdout):.2f}s")


if __name__ == "__main__":
    main()
