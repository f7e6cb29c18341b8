"""Time the numba kernels against the numpy fallbacks.

Run ``python benchmarks/bench_kernels.py [--n 1024] [--paths 256] [--d 1,2]``.
Both backends are imported from one process; the first numba call per
signature is excluded as JIT warm-up.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fsde_mle import _kernels


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _full_conv(conv, rev, F):
    n = rev.shape[0]
    for k in range(1, n + 1):
        conv(rev, F, k)


def bench(n, paths, d, repeat):
    rng = np.random.default_rng(0)
    rev = rng.standard_normal((n, d, d))
    F = rng.standard_normal((paths, n, d))
    nt, m = 64, d
    W = rng.standard_normal((nt, d, d))
    f = rng.standard_normal((paths, d))
    G = rng.standard_normal((paths, nt, d, d, m))
    c = rng.standard_normal((paths, d, m))
    rows = []
    backends = [("numpy", _kernels.numpy_kernels)]
    if _kernels.numba_kernels is None:
        try:
            _kernels.numba_kernels = _kernels._build_numba()
        except ImportError:
            pass
    if _kernels.numba_kernels is not None:
        backends.append(("numba", _kernels.numba_kernels))
    ref = None
    for name, (conv, push_s, push_p) in backends:
        out = conv(rev, F, n)  # warm-up and agreement check
        if ref is None:
            ref = out
        else:
            assert np.allclose(out, ref, rtol=1e-10, atol=1e-10)
        acc = np.zeros((paths, nt, d))
        push_s(acc, W, f)
        push_p(acc, G, c)
        rows.append((name, "conv (all steps)", _time(lambda: _full_conv(conv, rev, F), repeat)))
        rows.append((name, "push_shared", _time(lambda: push_s(acc, W, f), repeat * 20)))
        rows.append((name, "push_paths", _time(lambda: push_p(acc, G, c), repeat * 20)))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1024)
    ap.add_argument("--paths", type=int, default=256)
    ap.add_argument("--d", default="1,2")
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    print(f"{'d':>2} {'backend':>7} {'kernel':>18} {'ms':>10}")
    for d in (int(x) for x in a.d.split(",")):
        for name, kern, sec in bench(a.n, a.paths, d, a.repeat):
            print(f"{d:>2} {name:>7} {kern:>18} {sec * 1e3:10.3f}")


if __name__ == "__main__":
    main()
