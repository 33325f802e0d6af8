"""Compare the compiled kernels with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py --symbols 20000 --repeat 3
"""
import argparse
import time

import numpy as np

from nlcodec import _purepy
from nlcodec.coder import quantize_pmfs
from nlcodec.entropy import discretized_pmf

try:
    from nlcodec import _speedups
except ImportError:
    _speedups = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def coder_case(n, rng):
    mu, sigma = rng.normal(0, 3, n), np.exp(rng.uniform(np.log(0.11), np.log(20), n))
    pmf, tail = discretized_pmf(mu, sigma, "gaussian", -64, 63)
    cdf = quantize_pmfs(np.concatenate([pmf, tail[:, None]], axis=1), 16)
    values = np.clip(np.round(rng.normal(mu, sigma)), -64, 63).astype(np.int64)
    return cdf, values


def bench(backend, cdf, values, dense_args, repeat):
    enc = backend.RangeEncoder()
    enc.encode(cdf, values, -64, True, 16)
    data = enc.finish()

    def encode():
        e = backend.RangeEncoder()
        e.encode(cdf, values, -64, True, 16)
        e.finish()

    def decode():
        backend.RangeDecoder(data).decode(cdf, -64, True, 16)

    return {
        "encode": best_of(encode, repeat),
        "decode": best_of(decode, repeat),
        "dense_seq": best_of(lambda: backend.dense_seq(*dense_args), repeat),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--symbols", type=int, default=20000)
    parser.add_argument("--rows", type=int, default=256, help="rows for dense_seq (one latent grid)")
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    cdf, values = coder_case(args.symbols, rng)
    # 5x5 context taps (12) times M=32 channels in, 2M out
    dense_args = (rng.normal(size=(args.rows, 384)), rng.normal(size=(384, 64)), rng.normal(size=64))

    results = {"python": bench(_purepy, cdf, values, dense_args, args.repeat)}
    if _speedups is not None:
        results["compiled"] = bench(_speedups, cdf, values, dense_args, args.repeat)
    else:
        print("compiled extension not built; reporting the fallback only")

    print(f"{'kernel':<10} {'python (s)':>12} {'compiled (s)':>13} {'speedup':>8}")
    for kernel in ("encode", "decode", "dense_seq"):
        slow = results["python"][kernel]
        fast = results.get("compiled", {}).get(kernel)
        if fast is None:
            print(f"{kernel:<10} {slow:12.4f} {'-':>13} {'-':>8}")
        else:
            print(f"{kernel:<10} {slow:12.4f} {fast:13.4f} {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()
