"""Timing comparison of the compiled training kernels against the numpy
fallback.

Both backends are imported directly, so one process benchmarks both; the
LOSSALIGN_PURE_PYTHON switch is for running the package on the fallback,
not for benchmarking it. Workload sizes bracket what the training
orchestrator actually submits: one chunk is a block of minibatch
iterations between two metric evaluations.

Run from the repository root:

    python3 bench/bench_kernels.py
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lossalign.engine.network import MLP
from lossalign.kernels import layout_of, pack, pyimpl
from lossalign.rng import stream

try:
    from lossalign.kernels import _core
except ImportError:
    _core = None


def _classifier_case(dim, hidden, classes, n, iters, batch):
    rng = stream(0, "bench", "classifier", dim, iters)
    net = MLP(dim, hidden, classes, head="softmax", rng=rng)
    X = rng.normal(size=(n, dim))
    labels = rng.integers(0, classes, size=n)
    idx = rng.integers(0, n, size=(iters, batch))
    phi = np.eye(classes)
    args = (layout_of(net), X, labels, phi, idx, 0, 0.05, 0.9, 1e-8)
    return pack(net), args


def _embedding_case(dim, hidden, embed, n, iters, batch, kind):
    rng = stream(0, "bench", "embedding", dim, iters, kind)
    net = MLP(dim, hidden, embed, head="l2", rng=rng)
    X = rng.normal(size=(n, dim))
    a = rng.integers(0, n, size=(iters, batch))
    p = rng.integers(0, n, size=(iters, batch))
    ni = rng.integers(0, n, size=(iters, batch))
    phi = np.full(10, 0.3) if kind == pyimpl.KIND_MIXTURE else np.ones(2)
    args = (layout_of(net), X, a, p, ni, kind, phi, 0.2, 1.0, 0, 0.05, 0.9, 1e-8)
    return pack(net), args


def _time(fn, theta0, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        theta = theta0.copy()
        velocity = np.zeros_like(theta)
        t0 = time.perf_counter()
        fn(theta, velocity, *args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per case; the best run is kept")
    opts = parser.parse_args()

    cases = [
        ("classifier 16d/32h/8c", "classifier_chunk",
         _classifier_case(16, (32,), 8, 512, 20, 32)),
        ("classifier 64d/2x64h/12c", "classifier_chunk",
         _classifier_case(64, (64, 64), 12, 2048, 20, 64)),
        ("triplet 16d/32h/8e", "embedding_chunk",
         _embedding_case(16, (32,), 8, 512, 20, 32, pyimpl.KIND_TRIPLET)),
        ("mixture 16d/32h/8e", "embedding_chunk",
         _embedding_case(16, (32,), 8, 512, 20, 32, pyimpl.KIND_MIXTURE)),
        ("focal 16d/32h/8e", "embedding_chunk",
         _embedding_case(16, (32,), 8, 512, 20, 32, pyimpl.KIND_FOCAL)),
    ]

    if _core is None:
        print("compiled backend not built; timing the numpy fallback only")
    header = f"{'case':28s} {'python':>10s} {'compiled':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for name, fn_name, (theta0, args) in cases:
        t_py = _time(getattr(pyimpl, fn_name), theta0, args, opts.repeats)
        if _core is None:
            print(f"{name:28s} {t_py * 1e3:8.2f}ms {'-':>10s} {'-':>8s}")
            continue
        t_c = _time(getattr(_core, fn_name), theta0, args, opts.repeats)
        print(f"{name:28s} {t_py * 1e3:8.2f}ms {t_c * 1e3:8.2f}ms "
              f"{t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
