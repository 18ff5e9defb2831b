#!/usr/bin/env python3
"""Compare the numba kernel backend against the pure-numpy fallback.

Runs the convolution gather/scatter kernels, a full single-window embed
(the streaming real-time path), and a training step, under whichever
backend this process was started with.  Run it twice to compare:

    python benchmarks/bench_backend.py
    KWSPOT_NUMBA=0 python benchmarks/bench_backend.py

BLAS threading matters on small hosts; pin it for stable numbers, e.g.
OPENBLAS_NUM_THREADS=1.
"""

import time

import numpy as np

from kwspot.audio import AudioClip
from kwspot.autodiff import Adam, Tensor, backward, kernels
from kwspot.backend import backend_name
from kwspot.features import compute_logmel
from kwspot.losses import cross_entropy
from kwspot.models import ClassifierHead, EmbeddingModelSpec, EmbeddingNet, classify


def timeit(fn, repeat=10, warmup=2):
    for _ in range(warmup):
        fn()
    best = float("inf")
    total = 0.0
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        dt = time.perf_counter() - t0
        best = min(best, dt)
        total += dt
    return total / repeat, best


def bench_kernels():
    rng = np.random.default_rng(0)
    cases = [
        ("conv1-like  B=1", (1, 46, 104, 1), 7, 7, 2, 1, 20, 98),
        ("conv2-like  B=1", (1, 22, 100, 16), 3, 3, 1, 1, 20, 98),
        ("conv5-like  B=1", (1, 7, 27, 128), 3, 3, 1, 1, 5, 25),
        ("conv2-like  B=128", (128, 22, 100, 16), 3, 3, 1, 1, 20, 98),
    ]
    for name, shape, kh, kw, sy, sx, ho, wo in cases:
        xp = rng.standard_normal(shape).astype(np.float32)
        cols = kernels.im2col(xp, kh, kw, sy, sx, ho, wo)
        mean, best = timeit(lambda: kernels.im2col(xp, kh, kw, sy, sx, ho, wo))
        mean2, best2 = timeit(lambda: kernels.col2im(cols, xp.shape, kh, kw, sy, sx, ho, wo))
        print(f"  {name:18s} im2col {mean * 1e3:7.2f} ms   col2im {mean2 * 1e3:7.2f} ms")


def bench_embed():
    model = EmbeddingNet(seed=0)  # full-size backbone
    clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 16000))

    def one_window():
        model.embed(compute_logmel(clip).values)

    mean, best = timeit(one_window)
    verdict = "PASS" if best < 0.1 else "FAIL"
    print(f"  1 s window embed (full model): mean {mean * 1e3:6.1f} ms  "
          f"best {best * 1e3:6.1f} ms  [real-time stride budget 100 ms: {verdict}]")


def bench_train_step():
    spec = EmbeddingModelSpec(stage_channels=(8, 8, 16, 32, 64), stage_blocks=(1, 1, 1, 1))
    model = EmbeddingNet(spec, seed=0)
    head = ClassifierHead(20, seed=0)
    opt = Adam(model.parameters() + head.parameters())
    rng = np.random.default_rng(0)
    x = rng.standard_normal((128, 40, 98)).astype(np.float32)
    y = rng.integers(0, 20, size=128)

    def step():
        loss = cross_entropy(classify(model, head, Tensor(x), training=True), y)
        backward(loss)
        opt.step(1e-3)
        opt.zero_grad()

    mean, best = timeit(step, repeat=5, warmup=1)
    print(f"  toy-scale train step (batch 128): mean {mean:5.2f} s  best {best:5.2f} s")


if __name__ == "__main__":
    print(f"backend: {backend_name()}")
    print("kernels:")
    bench_kernels()
    print("streaming:")
    bench_embed()
    print("training:")
    bench_train_step()
