#!/usr/bin/env python3
"""Side-by-side timing of the compiled and pure kernel backends.

Times the raw generator fill and the fused train step over a few shapes,
taking the best of --repeats runs for each cell. The compiled column reads
"n/a" when the extension is not built.

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --repeats 7 --batch 256
"""

import argparse
import time

import numpy as np

from consem.backend import get_backend
from consem.model import Model
from consem.rng import Rng

RNG_SIZES = [1_000, 100_000, 2_000_000]
STEP_SHAPES = [(16, 16), (64, 64), (64, 256), (256, 64)]  # (dim, batch)


def _best(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _unit_rows(X):
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def _step_problem(dim: int, batch: int, seed: int = 5):
    rng = Rng(seed)
    model = Model.init(dim, dim, rng)
    model.A += 0.02 * rng.normal(dim * dim).reshape(dim, dim)
    V = _unit_rows(rng.normal(batch * dim).reshape(batch, dim))
    T = _unit_rows(rng.normal(batch * dim).reshape(batch, dim))
    labels = (rng.uniform(batch) < 0.5).astype(np.float64)
    labels[:2] = [0.0, 1.0]
    drop_u = rng.uniform(batch * dim)
    grads = {k: np.zeros_like(v) for k, v in model.params().items()}
    return model, V, T, labels, drop_u, grads


def bench_rng(impl, n: int, repeats: int) -> float:
    state = Rng(11)._state.copy()
    return _best(lambda: impl.rng_fill_u64(state, n), repeats)


def bench_step(impl, dim: int, batch: int, repeats: int) -> float:
    model, V, T, labels, drop_u, grads = _step_problem(dim, batch)
    return _best(lambda: impl.train_step(model, V, T, labels, drop_u,
                                         1.0, True, grads), repeats)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="keep the best of this many timings per cell")
    parser.add_argument("--batch", type=int, default=None,
                        help="use a single batch size instead of the grid")
    args = parser.parse_args()

    pure = get_backend("pure")
    try:
        fast = get_backend("fast")
    except ImportError:
        fast = None

    shapes = STEP_SHAPES if args.batch is None else [(64, args.batch)]
    header = f"{'kernel':<28}{'pure':>12}{'fast':>12}{'speedup':>10}"
    print(header)
    print("-" * len(header))

    for n in RNG_SIZES:
        t_pure = bench_rng(pure, n, args.repeats)
        t_fast = bench_rng(fast, n, args.repeats) if fast else None
        _row(f"rng_fill_u64 n={n}", n, t_pure, t_fast)

    for dim, batch in shapes:
        t_pure = bench_step(pure, dim, batch, args.repeats)
        t_fast = bench_step(fast, dim, batch, args.repeats) if fast else None
        _row(f"train_step d={dim} b={batch}", batch, t_pure, t_fast)

    if fast is None:
        print("\ncompiled extension not built; showing the pure backend only")


def _row(label: str, items: int, t_pure: float, t_fast) -> None:
    def rate(t):
        return f"{items / t / 1e6:8.2f}M/s" if t else "        n/a"

    speed = f"{t_pure / t_fast:8.1f}x" if t_fast else "       -"
    print(f"{label:<28}{rate(t_pure)}{rate(t_fast)}{speed}")


if __name__ == "__main__":
    main()
