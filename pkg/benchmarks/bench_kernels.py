"""Compare the numba kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 64]

Each kernel runs on identical inputs through both implementations; the
outputs must agree before timings are reported.  The last row times a full
classifier input gradient with each kernel table active.  Dense and conv
matmuls go through BLAS in both cases, so the end-to-end speedup is
smaller than the per-kernel one.
"""

import argparse
from timeit import default_timer as timer

import numpy as np

from waveform_adv import kernels, nn


def best_of(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        ts = timer()
        fn(*args)
        times.append(timer() - ts)
    return min(times)


def cases(batch, rng):
    n = 1024
    cx = lambda *s: rng.standard_normal(s) + 1j * rng.standard_normal(s)  # noqa: E731
    x, g, taps = cx(batch, n), cx(batch, n), cx(batch, 16)
    offs = rng.integers(0, 64, batch).astype(np.int64)
    feat = rng.standard_normal((batch, 16, n))
    cols = kernels.NUMPY_KERNELS["im2col"](feat, 7, 1)
    pooled, arg = kernels.NUMPY_KERNELS["maxpool_forward"](feat, 4)
    return {
        "fir_filter": (x, taps),
        "fir_adjoint_input": (g, taps),
        "fir_adjoint_taps": (x, g, 16),
        "tile": (cx(64), offs, n),
        "tile_accumulate": (g, offs, 64),
        "im2col": (feat, 7, 1),
        "col2im": (cols, 16, n, 7, 1),
        "maxpool_forward": (feat, 4),
        "maxpool_backward": (rng.standard_normal(pooled.shape), arg, 4, n),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-10)


def end_to_end(batch, repeat, rng):
    model = nn.modulation_surrogate(["a", "b", "c", "d"], 1024, seed=0)
    z = rng.standard_normal((batch, 1024)) + 1j * rng.standard_normal((batch, 1024))
    w = np.array([1.0, -1.0, 0.0, 0.0])
    out = {}
    for name, table in (("numba", kernels.NUMBA_KERNELS), ("numpy", kernels.NUMPY_KERNELS)):
        saved = kernels._ACTIVE
        kernels._ACTIVE = table
        try:
            out[name] = best_of(model.weighted_input_gradient, (z, w), repeat)
        finally:
            kernels._ACTIVE = saved
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    print(f"{'kernel':<20}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, inputs in cases(args.batch, rng).items():
        fa, fb = kernels.NUMBA_KERNELS[name], kernels.NUMPY_KERNELS[name]
        if not _same(fa(*inputs), fb(*inputs)):
            raise SystemExit(f"{name}: numba and numpy outputs differ")
        ta = best_of(fa, inputs, args.repeat)
        tb = best_of(fb, inputs, args.repeat)
        print(f"{name:<20}{ta * 1e3:>12.3f}{tb * 1e3:>12.3f}{tb / ta:>10.1f}")
    e2e = end_to_end(args.batch, max(3, args.repeat // 4), rng)
    print(f"{'input gradient':<20}{e2e['numba'] * 1e3:>12.3f}{e2e['numpy'] * 1e3:>12.3f}{e2e['numpy'] / e2e['numba']:>10.1f}")


if __name__ == "__main__":
    main()
