"""Compare the numba and numpy kernel paths on desk-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Also times one training epoch of the desk model under each backend.
"""

import argparse
import time
from timeit import repeat

import numpy as np

from dprp import _kernels as K
from dprp.config import RunConfig
from dprp.runs import build_datasets, new_state
from dprp.training import train_epoch


def best(fn, number, rep):
    return min(repeat(fn, number=number, repeat=rep)) / number


def kernel_cases(rng):
    xp = rng.standard_normal((64, 16, 10, 10))  # 8x8 map, pad 1
    cols = K._im2col_numpy(xp, 3, 3, 1, 8, 8)
    a = rng.standard_normal((288, 9))
    return [
        ("im2col 64x16x8x8 k3", lambda: K.im2col(xp, 3, 3, 1, 8, 8), 50),
        ("col2im 64x16x8x8 k3", lambda: K.col2im(cols, 64, 16, 10, 10, 3, 3, 1, 8, 8), 50),
        ("jacobi 288x9", lambda: K.jacobi_sweeps(a.copy(), np.eye(9), 288 * 2.2e-16, 80), 200),
    ]


def epoch_case():
    cfg = RunConfig.from_json({"data": {"per_class": 100, "size": 16}, "sgd": {"lr": 0.01, "epochs": 1}})
    train, _ = build_datasets(cfg.data)

    def run():
        train_epoch(new_state(cfg, cfg.loss), train)

    return run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if not K.NUMBA_AVAILABLE:
        print("numba not importable; numpy path only")
    rows = []
    for name, fn, number in kernel_cases(rng) + [("desk epoch (400 imgs, 16x16)", epoch_case(), 1)]:
        times = {}
        for flag in (False, True):
            K.use_numba(flag)
            fn()  # warm-up (jit compile)
            times[K.backend()] = best(fn, number, args.repeat)
        rows.append((name, times))
    K.use_numba(True)
    print(f"{'case':<32}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, t in rows:
        nb = t.get("numba", float("nan"))
        print(f"{name:<32}{1e3 * t['numpy']:>10.3f}{1e3 * nb:>10.3f}{t['numpy'] / nb:>9.2f}")


if __name__ == "__main__":
    t0 = time.perf_counter()
    main()
    print(f"total {time.perf_counter() - t0:.1f}s")
