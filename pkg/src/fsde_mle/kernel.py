"""The singular Volterra kernel ``K(u) = u**(alpha-1) E_{alpha,alpha}(A u**alpha)``.

``K`` factors as ``u**(alpha-1)`` times the bounded, Hölder continuous
matrix function ``E(u) = E_{alpha,alpha}(A u**alpha)``.  This module
evaluates both factors, tabulates them on uniform grids for the schemes and
checks the regularity integrals that drive the strong rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _quad
from .errors import InvalidParams, NotGridPoint, SingularArgument
from .mlf import MlParams, ml_matrix_scaled

__all__ = [
    "KernelTable",
    "kernel_eval",
    "kernel_values",
    "e_values",
    "decay_values",
    "build_kernel_table",
    "regularity_integrals",
    "interval_abs_integral",
    "holder_constant",
]


# batch tolerance for kernel tables; double precision loses about
# eps * exp(|z|**(1/alpha)) to cancellation, which 1e-12 would send to mpmath
KERNEL_TOL = 1e-10


def _as_matrix(A) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise InvalidParams(f"A must be square, got {A.shape}")
    return A


def _check_alpha(alpha):
    if not (0.5 < alpha < 1.0):
        raise InvalidParams(f"alpha must lie in (1/2, 1), got {alpha}")


def e_values(alpha: float, A, u) -> np.ndarray:
    """``E(u) = E_{alpha,alpha}(A u**alpha)`` for each ``u >= 0``; shape ``(N, d, d)``."""
    u = np.asarray(u, dtype=float).ravel()
    return ml_matrix_scaled(MlParams(alpha, alpha, KERNEL_TOL), _as_matrix(A), u**alpha)


def decay_values(alpha: float, A, t) -> np.ndarray:
    """Deterministic part ``E_{alpha,1}(A t**alpha)`` for each ``t >= 0``."""
    t = np.asarray(t, dtype=float).ravel()
    return ml_matrix_scaled(MlParams(alpha, 1.0, KERNEL_TOL), _as_matrix(A), t**alpha)


def kernel_values(alpha: float, A, u) -> np.ndarray:
    """``K(u)`` for an array of positive times; shape ``(N, d, d)``."""
    _check_alpha(alpha)
    u = np.asarray(u, dtype=float).ravel()
    if np.any(~(u > 0)):
        raise SingularArgument("the kernel is singular at u <= 0")
    return u[:, None, None] ** (alpha - 1.0) * e_values(alpha, A, u)


def kernel_eval(alpha: float, A, u: float) -> np.ndarray:
    """``K(u)`` as a ``d x d`` matrix.

    Examples
    --------
    >>> from fsde_mle.mlf import gamma
    >>> float(kernel_eval(0.75, [[0.0]], 1.0)[0, 0]) * gamma(0.75)
    1.0
    """
    return kernel_values(alpha, A, [u])[0]


def _readonly(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Kernel data on the uniform grid ``t_k = k T / n``.

    Grid times are formed as ``k * T / n`` rather than by accumulating
    ``h``, so ``t_n == T`` exactly.  Arrays are read-only and may be shared
    between threads.

    Attributes
    ----------
    k_at_grid : (n+1, d, d)
        ``K(m h)``; row 0 is NaN because ``K`` is singular there.
    e_at_grid : (n+1, d, d)
        ``E(m h)``, including the finite value ``E(0) = I / Gamma(alpha)``.
    decay : (n+1, d, d)
        ``E_{alpha,1}(A t_k**alpha)``, the propagator of the initial value.
    cell_integrals : (n, d, d) or None
        ``int_0^h K(m h + s) ds`` for ``m = 0 .. n-1``.
    """

    alpha: float
    A: np.ndarray
    n: int
    T: float
    h: float
    times: np.ndarray
    k_at_grid: np.ndarray
    e_at_grid: np.ndarray
    decay: np.ndarray
    cell_integrals: np.ndarray | None

    @property
    def d(self) -> int:
        return self.A.shape[0]


def cell_integrals(alpha: float, A, n: int, T: float = 1.0, q: int = 32) -> np.ndarray:
    """``int_0^h K(m h + s) ds`` for ``m = 0 .. n-1`` with ``h = T/n``.

    The first cell uses ``s = h v**(1/alpha)``, which turns
    ``s**(alpha-1) ds`` into a constant multiple of ``dv``; the remaining
    cells use ``q``-point Gauss-Legendre.
    """
    A = _as_matrix(A)
    h = T / n
    u0, w0 = _quad.power_substitution(h, alpha, q)
    first = np.einsum("i,ijk->jk", w0, kernel_values(alpha, A, u0))
    if n == 1:
        return first[None]
    edges = np.arange(1, n + 1) * T / n
    nodes, weights = _quad.gauss_panels(edges, q)
    vals = kernel_values(alpha, A, nodes) * weights[:, None, None]
    rest = vals.reshape(n - 1, q, A.shape[0], A.shape[0]).sum(axis=1)
    return np.concatenate([first[None], rest])


def build_kernel_table(model, n: int, *, with_cells: bool = True) -> KernelTable:
    """Tabulate the kernel of ``model`` on ``n`` uniform steps over ``[0, T]``.

    ``with_cells=False`` skips the cell integrals, which only the
    kernel-undiscretized schemes need.
    """
    if n < 1:
        raise InvalidParams(f"grid count must be >= 1, got {n}")
    alpha, A, T = model.alpha, model.A, model.T
    _check_alpha(alpha)
    times = np.arange(n + 1) * T / n
    e_grid = e_values(alpha, A, times)
    k_grid = np.full_like(e_grid, np.nan)
    k_grid[1:] = times[1:, None, None] ** (alpha - 1.0) * e_grid[1:]
    decay = decay_values(alpha, A, times)
    cells = cell_integrals(alpha, A, n, T) if with_cells else None
    _readonly(times, e_grid, k_grid, decay, *(() if cells is None else (cells,)))
    return KernelTable(alpha, model.A, n, T, T / n, times, k_grid, e_grid, decay, cells)


def _grid_index(t: float, h: float) -> int:
    k = round(t / h)
    if k < 1 or abs(k * h - t) > 1e-12 * max(1.0, abs(t)):
        raise NotGridPoint(f"t={t} is not a positive multiple of h={h}")
    return k


def _abs_or_sq(vals, weights, square):
    vals = vals**2 if square else np.abs(vals)
    return np.einsum("i,ijk->jk", weights, vals)


def _difference_integrals(alpha, A, h, t, t_ref, q=32):
    """Entrywise ``int_0^t |K(t-s) - K(t_ref-floor(s))|^p ds`` for ``p = 1`` and ``p = 2``.

    On the cell ``s in [j h, (j+1) h)`` the reference value is
    ``K(t_ref - j h)``; with ``u = t - s`` the cell maps to
    ``u in (t - (j+1) h, t - j h]``.  The cell touching ``u = 0`` uses a
    rule graded toward the singularity, with the grading power matched to
    ``p``; all other cells share one batched Gauss-Legendre evaluation.
    """
    cells = int(np.ceil(t / h - 1e-9))
    j = np.arange(cells)
    lo = np.maximum(t - (j + 1) * h, 0.0)
    hi = t - j * h
    refs = kernel_values(alpha, A, t_ref - j * h)
    singular = lo == 0.0
    out = []
    regular = np.flatnonzero(~singular)
    if regular.size:
        x, w = _quad.gauss(0.0, 1.0, q)
        u = lo[regular, None] + (hi - lo)[regular, None] * x[None, :]
        wt = (hi - lo)[regular, None] * w[None, :]
        diff = kernel_values(alpha, A, u.ravel()).reshape(u.shape + refs.shape[1:])
        diff -= refs[regular, None]
    for square in (False, True):
        total = np.zeros(refs.shape[1:])
        if regular.size:
            total += _abs_or_sq(diff.reshape((-1,) + refs.shape[1:]), wt.ravel(), square)
        for c in np.flatnonzero(singular):
            u, w = _quad.graded(hi[c], 2 * alpha - 1 if square else alpha)
            total += _abs_or_sq(kernel_values(alpha, A, u) - refs[c], w, square)
        out.append(total)
    return out


def regularity_integrals(model, n: int, t: float) -> tuple[float, float, float, float]:
    """The four kernel regularity integrals at grid time ``t``.

    Returns, each aggregated over matrix entries with the Frobenius norm,

    1. ``int_0^t |K(t-s) - K(t-floor(s))| ds``
    2. ``int_0^t |K(t-s) - K(t-floor(s))|^2 ds``
    3. ``int_0^t |K(t-s) - K(floor(t)-floor(s))| ds``
    4. ``int_0^t |K(t-s) - K(floor(t)-floor(s))|^2 ds``

    ``floor`` rounds down to the grid.  Because ``t`` must be a grid point
    the last two coincide with the first two.
    """
    alpha, A, T = model.alpha, model.A, model.T
    h = T / n
    if not (0 < t <= T * (1 + 1e-12)):
        raise NotGridPoint(f"t={t} is outside (0, T]")
    tk = _grid_index(t, h) * T / n
    t_floor = np.floor(tk / h + 1e-9) * h
    first = _difference_integrals(alpha, A, h, tk, tk)
    second = first if t_floor == tk else _difference_integrals(alpha, A, h, tk, t_floor)
    vals = [float(np.linalg.norm(m)) for m in (*first, *second)]
    return vals[0], vals[1], vals[2], vals[3]


def interval_abs_integral(alpha: float, A, t: float, h: float) -> float:
    """Frobenius norm of the entrywise ``int_t^{t+h} |K(s)| ds``."""
    A = _as_matrix(A)
    if t < 0 or h <= 0:
        raise InvalidParams("need t >= 0 and h > 0")
    if t == 0.0:
        u, w = _quad.graded(h, alpha)
    else:
        u, w = _quad.gauss_panels(np.linspace(t, t + h, 5))
    return float(np.linalg.norm(_abs_or_sq(kernel_values(alpha, A, u), w, False)))


def holder_constant(alpha: float, A, points: int = 201, T: float = 1.0) -> float:
    """Largest ``||E(u1) - E(u2)|| / |u1 - u2|**alpha`` over a uniform grid on ``[0, T]``."""
    u = np.linspace(0.0, T, points)
    E = e_values(alpha, A, u)
    diff = np.linalg.norm(E[:, None] - E[None, :], axis=(-2, -1))
    gap = np.abs(u[:, None] - u[None, :])
    mask = gap > 0
    return float(np.max(diff[mask] / gap[mask] ** alpha))
