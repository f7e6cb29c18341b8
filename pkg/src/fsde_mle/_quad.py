"""Gauss-Legendre rules on intervals, with variants for endpoint singularities."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _legendre(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss(a: float, b: float, q: int = 32):
    """Nodes and weights of the ``q``-point Gauss-Legendre rule on ``[a, b]``."""
    x, w = _legendre(q)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def gauss_panels(edges, q: int = 32):
    """Composite Gauss-Legendre rule over consecutive panels ``edges``."""
    edges = np.asarray(edges, dtype=float)
    x, w = _legendre(q)
    half = 0.5 * np.diff(edges)
    nodes = edges[:-1, None] + half[:, None] * (x[None, :] + 1.0)
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def power_substitution(h: float, power: float, q: int = 32):
    r"""Rule on ``[0, h]`` for integrands ``u**(power - 1) * g(u)``, ``g`` smooth.

    Uses ``u = h v**(1/power)``, after which ``u**(power-1) du`` is the
    constant ``h**power / power dv``.  Returned weights already include the
    Jacobian, so ``sum(w * f(u))`` approximates ``int_0^h f``.
    """
    v, wv = gauss(0.0, 1.0, q)
    u = h * v ** (1.0 / power)
    w = wv * (h / power) * v ** (1.0 / power - 1.0)
    return u, w


def graded(h: float, power: float, levels: int = 40, q: int = 16):
    r"""Rule on ``[0, h]`` geometrically graded toward the singular end 0.

    Panels ``[h 2^{-i-1}, h 2^{-i}]`` for ``i < levels`` use plain Gauss
    rules; the innermost ``[0, h 2^{-levels}]`` uses
    :func:`power_substitution` with ``power``.  Suitable for integrands that
    mix several algebraic endpoint behaviours, or are not separable
    (absolute values, norms).
    """
    edges = h * 2.0 ** -np.arange(levels, -1, -1, dtype=float)
    u_in, w_in = power_substitution(edges[0], power, q)
    u_out, w_out = gauss_panels(edges, q)
    return np.concatenate([u_in, u_out]), np.concatenate([w_in, w_out])
