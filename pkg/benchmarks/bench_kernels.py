"""Benchmark the compiled kernels against the numpy fallback.

Times the convolution and pooling primitives on shapes representative of
the training workloads, plus one full forward+backward training step of the
32x32 toy net.  Run:

    python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from ftcnn import kernels, nn, optim
from ftcnn.experiment import preset_architecture


def timeit(fn, repeats):
    fn()  # warmup
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


CASES = [
    # (label, batch, cin, hw, cout, k, stride)
    ("conv 32x32 tiny-net front", 32, 1, 32, 8, 5, 1),
    ("conv 14x14 tiny-net mid", 32, 8, 14, 16, 5, 1),
    ("conv 13x13 patch-net", 128, 3, 13, 8, 3, 1),
    ("conv 27x27 wide", 16, 96, 27, 64, 5, 1),
]


def bench_conv(impl, batch, cin, hw, cout, k, stride, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(batch, cin, hw, hw))
    w = rng.normal(size=(cout, cin, k, k))
    b = rng.normal(size=cout)
    fwd = timeit(lambda: impl.conv2d_forward(x, w, b, stride), repeats)
    y = impl.conv2d_forward(x, w, b, stride)
    gy = rng.normal(size=y.shape)
    bwd = timeit(lambda: impl.conv2d_backward(x, w, gy, stride), repeats)
    return fwd, bwd


def bench_pool(impl, repeats):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(64, 16, 28, 28))
    fwd = timeit(lambda: impl.maxpool_forward(x, 2, 2, 2), repeats)
    y, idx = impl.maxpool_forward(x, 2, 2, 2)
    gy = rng.normal(size=y.shape)
    bwd = timeit(lambda: impl.maxpool_backward(gy, idx, 2, 2, 2, 28, 28), repeats)
    return fwd, bwd


def bench_train_step(backend_name, repeats):
    import os

    spec = preset_architecture("tiny32", classes=2)
    impl = kernels.get_backend(backend_name)
    saved = (kernels.conv2d_forward, kernels.conv2d_backward,
             kernels.maxpool_forward, kernels.maxpool_backward)
    kernels.conv2d_forward = impl.conv2d_forward
    kernels.conv2d_backward = impl.conv2d_backward
    kernels.maxpool_forward = impl.maxpool_forward
    kernels.maxpool_backward = impl.maxpool_backward
    try:
        net = nn.build_network(spec, "xavier", seed=0)
        opt = optim.OptimizerState.zeros_like(net)
        sched = optim.LearningSchedule(
            mu=0.9, gamma=0.95,
            alpha_per_layer={n: 0.001 for n in spec.trainable_names()},
            batch_size=32, epoch_length=1000,
        )
        rng = np.random.default_rng(2)
        x = rng.normal(size=(32, 1, 32, 32))
        labels = rng.integers(0, 2, 32)

        def step():
            trace = nn.forward(net, spec, x)
            grads = nn.backward(net, spec, trace, labels)
            optim.sgd_step(net, opt, grads, sched)

        return timeit(step, repeats)
    finally:
        (kernels.conv2d_forward, kernels.conv2d_backward,
         kernels.maxpool_forward, kernels.maxpool_backward) = saved


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    names = kernels.available_backends()
    print(f"available backends: {', '.join(names)} (active: {kernels.BACKEND})")
    header = f"{'case':32s}" + "".join(f"{n + ' fwd':>14s}{n + ' bwd':>14s}" for n in names)
    print(header)
    print("-" * len(header))
    for label, *shape in CASES:
        row = f"{label:32s}"
        for n in names:
            fwd, bwd = bench_conv(kernels.get_backend(n), *shape, args.repeats)
            row += f"{fwd * 1e3:12.2f}ms{bwd * 1e3:12.2f}ms"
        print(row)
    row = f"{'maxpool 28x28 k2 s2':32s}"
    for n in names:
        fwd, bwd = bench_pool(kernels.get_backend(n), args.repeats)
        row += f"{fwd * 1e3:12.2f}ms{bwd * 1e3:12.2f}ms"
    print(row)
    print()
    for n in names:
        t = bench_train_step(n, args.repeats)
        print(f"full training step (tiny32, batch 32) [{n}]: {t * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
