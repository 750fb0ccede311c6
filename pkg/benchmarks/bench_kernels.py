"""Time the compiled LSTM kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes follow desk-scale training (batch 32, hidden 64) and single-step
beam decoding (T=1, K=10). Outputs of the two backends are compared before
timing.
"""

import argparse
import timeit

import numpy as np

from zsnmt import numcore as nc

CASES = [
    # name, T, B, H
    ("train batch", 20, 32, 64),
    ("long batch", 40, 32, 64),
    ("beam step", 1, 10, 64),
    ("paper width", 20, 32, 256),
]


def make_case(T, B, H, dtype=np.float32, seed=0):
    rng = np.random.default_rng(seed)
    xw = rng.standard_normal((T, B, 4 * H)).astype(dtype)
    w_h = (rng.standard_normal((H, 4 * H)) * 0.1).astype(dtype)
    h0 = rng.standard_normal((B, H)).astype(dtype)
    c0 = rng.standard_normal((B, H)).astype(dtype)
    lengths = rng.integers(max(1, T // 2), T + 1, size=B)
    mask = (np.arange(T)[:, None] < lengths[None, :]).astype(np.uint8)
    return xw, w_h, h0, c0, mask


def run_pair(kern, args, seed=1):
    xw, w_h, h0, c0, mask = args
    fwd = kern.lstm_forward(xw, w_h, h0, c0, mask, False)
    rng = np.random.default_rng(seed)
    dhs = rng.standard_normal(fwd[0].shape).astype(xw.dtype)
    dh = rng.standard_normal(h0.shape).astype(xw.dtype)
    dc = rng.standard_normal(c0.shape).astype(xw.dtype)
    bwd = kern.lstm_backward(dhs, dh, dc, w_h, h0, c0, mask, *fwd, False)
    return fwd, bwd


def best_time(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = nc.available_backends()
    if "cython" not in backends:
        print("compiled kernels are not built; only the numpy fallback is available")
    print(f"active backend: {nc.BACKEND}")
    header = f"{'case':<12} {'T':>3} {'B':>3} {'H':>4} {'pass':<8}" + "".join(f" {n:>10}" for n in backends)
    if len(backends) > 1:
        header += f" {'speedup':>8}"
    print(header)
    for name, T, B, H in CASES:
        case = make_case(T, B, H)
        if len(backends) > 1:
            ref = run_pair(backends["python"], case)
            got = run_pair(backends["cython"], case)
            for a, b in zip(ref[0] + ref[1], got[0] + got[1]):
                np.testing.assert_allclose(a, b, rtol=1e-3, atol=1e-4)
        number = max(1, int(2000 // (T * B)))
        for label, fn in (
            ("forward", lambda k: k.lstm_forward(*case, False)),
            ("fwd+bwd", lambda k: run_pair(k, case)),
        ):
            times = {n: best_time(lambda k=k: fn(k), args.repeat, number) for n, k in backends.items()}
            row = f"{name:<12} {T:>3} {B:>3} {H:>4} {label:<8}" + "".join(
                f" {1e3 * t:8.3f}ms" for t in times.values()
            )
            if len(times) > 1:
                row += f" {times['python'] / times['cython']:7.1f}x"
            print(row)


if __name__ == "__main__":
    main()
