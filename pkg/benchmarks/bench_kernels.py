"""Time the numba kernels against the numpy fallback.

Runs every kernel on search-sized tensors, then one full supernet training
step per backend, and prints a table of median wall times.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 32] [--channels 16]
"""

import argparse
import statistics
import time

import numpy as np

from hiernas import kernels
from hiernas.data import synth_texture
from hiernas.operators import space
from hiernas.supernet import ArchitectureParams, Supernet
from hiernas.training import OneLevelOptimizer, TrainConfig, one_level_step


def median_time(fn, repeat):
    fn()  # warm-up, includes JIT compilation for numba
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def kernel_cases(batch, channels, hw, rng):
    xp = rng.standard_normal((batch, channels, hw + 4, hw + 4)).astype(np.float32)
    w3 = rng.standard_normal((channels, 3, 3)).astype(np.float32)
    w5 = rng.standard_normal((channels, 5, 5)).astype(np.float32)
    g = rng.standard_normal((batch, channels, hw, hw)).astype(np.float32)
    cols = kernels.im2col(xp[:, :, 1:-1, 1:-1], 3, 1, 1, hw, hw)
    _, idx = kernels.maxpool(xp[:, :, 1:-1, 1:-1], 3, 1, hw, hw)
    return {
        "im2col 3x3": lambda: kernels.im2col(xp[:, :, 1:-1, 1:-1], 3, 1, 1, hw, hw),
        "col2im 3x3": lambda: kernels.col2im(cols, hw + 2, hw + 2, 1, 1),
        "depthwise 3x3": lambda: kernels.depthwise_conv(xp[:, :, 1:-1, 1:-1], w3, 1, 1, hw, hw),
        "depthwise 5x5": lambda: kernels.depthwise_conv(xp, w5, 1, 1, hw, hw),
        "depthwise 3x3 grad": lambda: kernels.depthwise_conv_grad(xp[:, :, 1:-1, 1:-1], w3, g, 1, 1),
        "dilated 3x3 grad": lambda: kernels.depthwise_conv_grad(xp, w3, g, 1, 2),
        "maxpool 3x3": lambda: kernels.maxpool(xp[:, :, 1:-1, 1:-1], 3, 1, hw, hw),
        "maxpool 3x3 grad": lambda: kernels.maxpool_grad(g, idx, 3, 1, hw + 2, hw + 2),
    }


def train_step(batch, channels, hw):
    ds = synth_texture(batch, hw, seed=0)
    net = Supernet(3, channels, 2, ArchitectureParams.uniform(space("S1").kinds, 2), 2, rng=0)
    opt = OneLevelOptimizer(net.weights(), net.arch_parameters(), TrainConfig())
    return lambda: one_level_step(net, ds.images, ds.labels, opt)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--hw", type=int, default=16)
    args = ap.parse_args()

    backends = kernels.available()
    if "numba" not in backends:
        print("numba is not importable; only the numpy backend can be timed")
    results = {}
    for name in backends:
        kernels.use(name)
        cases = kernel_cases(args.batch, args.channels, args.hw, np.random.default_rng(0))
        for label, fn in cases.items():
            results.setdefault(label, {})[name] = median_time(fn, args.repeat)
        step = train_step(args.batch, args.channels, args.hw)
        results.setdefault("supernet train step (S1, 3 cells)", {})[name] = median_time(step, max(3, args.repeat // 5))

    header = f"{'case':<36}" + "".join(f"{b + ' ms':>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, row in results.items():
        line = f"{label:<36}" + "".join(f"{1e3 * row[b]:>12.3f}" for b in backends)
        if len(backends) == 2:
            line += f"{row['numpy'] / row['numba']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
