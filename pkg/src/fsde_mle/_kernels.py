"""Hot loops of the schemes, as numba kernels with numpy fallbacks.

Set ``FSDE_MLE_DISABLE_NUMBA=1`` to force the numpy versions.  Both backends
compute the same sums; they are not guaranteed to agree bit for bit because
the summation order differs.

Kernels
-------
conv_step(rev, F, k) -> (p, d)
    ``sum_{j<k} K_{k-j} F[:, j]`` where ``rev[i] = K_{n-i}^T``.
push_shared(acc, W, f)
    ``acc[p, t, a] += sum_b W[t, a, b] f[p, b]`` in place.
push_paths(acc, G, c)
    ``acc[p, t, a] += sum_{b, l} G[p, t, a, b, l] c[p, b, l]`` in place.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["BACKEND", "conv_step", "push_shared", "push_paths", "numpy_kernels", "numba_kernels"]


def _np_conv_step(rev, F, k):
    n, d, _ = rev.shape
    p = F.shape[0]
    return F[:, :k].reshape(p, k * d) @ rev[n - k:].reshape(k * d, d)


def _np_push_shared(acc, W, f):
    acc += np.einsum("tab,pb->pta", W, f)


def _np_push_paths(acc, G, c):
    acc += np.einsum("ptabl,pbl->pta", G, c)


numpy_kernels = (_np_conv_step, _np_push_shared, _np_push_paths)
numba_kernels = None


def _build_numba():
    from numba import njit

    # reassociation lets the lag reduction vectorize; NaN/inf still propagate
    fast = {"reassoc", "contract"}

    @njit(cache=True, nogil=True, fastmath=fast)
    def conv_step(rev, F, k):
        n, d, _ = rev.shape
        p = F.shape[0]
        out = np.zeros((p, d))
        base = n - k
        for q in range(p):
            for a in range(d):
                s = 0.0
                for b in range(d):
                    for j in range(k):
                        s += F[q, j, b] * rev[base + j, b, a]
                out[q, a] = s
        return out

    @njit(cache=True, nogil=True)
    def push_shared(acc, W, f):
        p, nt, d = acc.shape
        for q in range(p):
            for t in range(nt):
                for a in range(d):
                    s = 0.0
                    for b in range(d):
                        s += W[t, a, b] * f[q, b]
                    acc[q, t, a] += s

    @njit(cache=True, nogil=True)
    def push_paths(acc, G, c):
        p, nt, d = acc.shape
        m = G.shape[4]
        for q in range(p):
            for t in range(nt):
                for a in range(d):
                    s = 0.0
                    for b in range(d):
                        for ell in range(m):
                            s += G[q, t, a, b, ell] * c[q, b, ell]
                    acc[q, t, a] += s

    return conv_step, push_shared, push_paths


def _numba_wanted() -> bool:
    return os.environ.get("FSDE_MLE_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes")


if _numba_wanted():
    try:
        numba_kernels = _build_numba()
    except ImportError:  # numba missing: stay on numpy
        numba_kernels = None

if numba_kernels is not None:
    BACKEND = "numba"
    conv_step, push_shared, push_paths = numba_kernels
else:
    BACKEND = "numpy"
    conv_step, push_shared, push_paths = numpy_kernels
