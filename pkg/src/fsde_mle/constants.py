"""Constants of the limiting error distributions.

All three constants are double integrals over ``x in (0, 1)`` and
``y in (0, inf)`` whose integrands depend on ``ceil(y)``:

    kappa11^2 = G^-2 int int ((y + x)^(alpha-1) - ceil(y)^(alpha-1))^2 dy dx
    kappa2^2  = G^-2 int int ((ceil(y) - x)^(alpha-1) - ceil(y)^(alpha-1))^2 dy dx
    kappa1^2  = kappa11^2 + 1 / (G^2 2 alpha (2 alpha - 1))

with ``G = Gamma(alpha)``.  The ``y`` axis is cut at every integer so each
cell carries a smooth integrand, except the first cell which holds an
integrable singularity and gets a graded or substituted rule.  Far cells
decay like ``y**(2 alpha - 4)``.  The tail beyond ``y_max`` is bounded with
the dominating function :func:`psi`, and that bound must meet ``tail_tol``;
the tail itself is then added back from the leading-order asymptotics of
the last cell, which leaves an error well below the bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _quad
from .errors import InvalidParams, SingularArgument, TailTooLarge
from .mlf import gamma

__all__ = [
    "QuadConfig",
    "KappaResult",
    "psi",
    "kappa11_sq",
    "kappa1_sq",
    "kappa2_sq",
    "kappa_table",
    "DEFAULT_ALPHAS",
]

DEFAULT_ALPHAS = tuple(np.round(np.arange(0.55, 0.951, 0.05), 2))
_START_Y_MAX = 200
_MAX_Y_MAX = 2**24


@dataclass(frozen=True)
class QuadConfig:
    """Quadrature controls.

    Parameters
    ----------
    y_max : int or None
        Last integer cell kept on the ``y`` axis.  ``None`` starts at 200 and
        doubles until the tail bound meets ``tail_tol``.
    cells_per_unit : int
        Gauss-Legendre nodes per axis on near cells.  Cells beyond 64 use
        half as many, cells beyond 1024 a quarter (never fewer than 4).
    tail_tol : float
        Largest acceptable bound on the neglected tail.
    """

    y_max: int | None = None
    cells_per_unit: int = 16
    tail_tol: float = 1e-8

    def __post_init__(self):
        if self.y_max is not None and self.y_max < 1:
            raise InvalidParams(f"y_max must be >= 1, got {self.y_max}")
        if self.cells_per_unit < 2:
            raise InvalidParams("cells_per_unit must be >= 2")
        if not self.tail_tol > 0:
            raise InvalidParams("tail_tol must be positive")


@dataclass(frozen=True)
class KappaResult:
    alpha: float
    value: float
    tail_estimate: float
    y_max: int


def psi(alpha: float, y: float) -> float:
    """Dominating function: ``y**(2a-2)`` on ``(0, 1]`` and ``y**(2a-4)`` beyond."""
    if not y > 0:
        raise SingularArgument("psi is defined for y > 0 only")
    return float(y ** (2 * alpha - 2) if y <= 1 else y ** (2 * alpha - 4))


def _check_alpha(alpha):
    if not (0.5 < alpha < 1.0):
        raise InvalidParams(f"alpha must lie in (1/2, 1), got {alpha}")


# cell integrals --------------------------------------------------------------


_NODE_BANDS = ((64, 1), (1024, 2), (None, 4))  # (last cell, node divisor)


def _bands(lo, hi, q):
    """Split cells ``lo .. hi`` into runs sharing one node count."""
    start = lo
    for last, div in _NODE_BANDS:
        stop = hi if last is None else min(hi, last)
        if start <= stop:
            yield start, stop, max(4, q // div)
            start = stop + 1


def _cells_11(alpha, ms, q):
    """``int_0^1 int_{m-1}^m ((y+x)^(a-1) - m^(a-1))^2 dy dx`` for each ``m >= 2``."""
    t, w = _quad.gauss(0.0, 1.0, q)
    m = ms[:, None, None].astype(float)
    y = m - 1.0 + t[None, :, None]
    x = t[None, None, :]
    vals = ((y + x) ** (alpha - 1.0) - m ** (alpha - 1.0)) ** 2
    return np.einsum("cij,i,j->c", vals, w, w)


def _cells_2(alpha, ms, q):
    """``int_0^1 ((m-x)^(a-1) - m^(a-1))^2 dx`` for each ``m >= 2``; the y extent is 1."""
    x, w = _quad.gauss(0.0, 1.0, q)
    m = ms[:, None].astype(float)
    vals = ((m - x[None, :]) ** (alpha - 1.0) - m ** (alpha - 1.0)) ** 2
    return vals @ w


def _corner_11(alpha, q):
    """First cell of kappa11: singular where ``x + y -> 0``.

    The ``y`` rule is graded toward 0.  For each ``y`` node the ``x`` panels
    are ``[0, y], [y, 3y], [3y, 7y], ...``, matched to the distance ``y``
    of the singularity at ``x = -y``.
    """
    ys, wy = _quad.graded(1.0, 2 * alpha, levels=50, q=q)
    total = 0.0
    for y, wyi in zip(ys, wy):
        k = int(np.ceil(np.log2(1.0 / y + 1.0)))
        edges = np.minimum(y * (2.0 ** np.arange(k + 1) - 1.0), 1.0)
        edges = np.append(edges[edges < 1.0], 1.0)
        x, wx = _quad.gauss_panels(edges, q)
        total += wyi * np.dot(wx, ((y + x) ** (alpha - 1.0) - 1.0) ** 2)
    return total


def _corner_2(alpha, q):
    """First cell of kappa2: ``int_0^1 ((1-x)^(a-1) - 1)^2 dx``.

    ``x = 1 - w**(1/(2a-1))`` makes the leading ``(1-x)^(2a-2)`` part
    constant in ``w``; the remaining ``w**((1-a)/(2a-1))`` behaviour is
    handled by grading toward ``w = 0``.
    """
    p = 1.0 / (2 * alpha - 1)
    w, ww = _quad.graded(1.0, 1.0 + (1.0 - alpha) * p, levels=40, q=q)
    r = w**p  # 1 - x
    jac = p * w ** (p - 1.0)
    return float(np.dot(ww * jac, (r ** (alpha - 1.0) - 1.0) ** 2))


_CELLS = {"11": (_cells_11, _corner_11), "2": (_cells_2, _corner_2)}


def _block(kind, alpha, lo, hi, q):
    """Cell integrals for cells ``lo .. hi`` inclusive, ``lo >= 2``."""
    cells, _ = _CELLS[kind]
    out = [np.zeros(0)]
    for a, b, nodes in _bands(lo, hi, q):
        for c in range(a, b + 1, 4096):
            out.append(cells(alpha, np.arange(c, min(b, c + 4095) + 1), nodes))
    return np.concatenate(out)


def _tail(alpha, ms, vals):
    """Psi bound on the cells beyond ``ms[-1]``, fitted on its upper half."""
    y_max = ms[-1]
    sel = ms >= y_max / 2
    C = float(np.max(vals[sel] * ms[sel].astype(float) ** (4 - 2 * alpha)))
    return C * y_max ** (2 * alpha - 3) / (3 - 2 * alpha)


def _integrate(kind, alpha, q: QuadConfig) -> KappaResult:
    _check_alpha(alpha)
    q = q or QuadConfig()
    corner = _CELLS[kind][1](alpha, q.cells_per_unit)
    y_max = q.y_max if q.y_max is not None else _START_Y_MAX
    if y_max == 1:
        # nothing to fit against, so bound the tail by the first far cell
        first = _block(kind, alpha, 2, 2, q.cells_per_unit)[0]
        tail = first * 2 ** (4 - 2 * alpha) / (3 - 2 * alpha)
        if tail > q.tail_tol:
            raise TailTooLarge(f"tail bound {tail:.3e} exceeds {q.tail_tol:.1e} at y_max=1")
        return KappaResult(alpha, corner / gamma(alpha) ** 2, tail / gamma(alpha) ** 2, 1)
    vals = _block(kind, alpha, 2, y_max, q.cells_per_unit)
    while True:
        ms = np.arange(2, y_max + 1)
        tail = _tail(alpha, ms, vals)
        if tail <= q.tail_tol:
            break
        if q.y_max is not None:
            raise TailTooLarge(
                f"tail bound {tail:.3e} exceeds {q.tail_tol:.1e} at y_max={y_max}"
            )
        if y_max >= _MAX_Y_MAX:
            raise TailTooLarge(f"tail bound {tail:.3e} still above tolerance at y_max={y_max}")
        vals = np.concatenate([vals, _block(kind, alpha, y_max + 1, 2 * y_max, q.cells_per_unit)])
        y_max *= 2
    g2 = gamma(alpha) ** 2
    # cells behave like c m^(2a-4); add the matching integral past y_max + 1/2
    c_last = vals[-1] * float(y_max) ** (4 - 2 * alpha)
    correction = c_last * (y_max + 0.5) ** (2 * alpha - 3) / (3 - 2 * alpha)
    # small cells first so the large ones do not swamp them
    total = corner + float(np.sum(vals[::-1])) + correction
    return KappaResult(alpha, total / g2, tail / g2, y_max)


def kappa11_sq(alpha: float, q: QuadConfig | None = None) -> float:
    """``kappa_{1,1}^2(alpha)``."""
    return _integrate("11", alpha, q).value


def kappa1_sq(alpha: float, q: QuadConfig | None = None) -> float:
    """``kappa_1^2(alpha) = kappa_{1,1}^2 + 1 / (Gamma(alpha)^2 2 alpha (2 alpha - 1))``."""
    return kappa11_sq(alpha, q) + _kappa1_gap(alpha)


def _kappa1_gap(alpha):
    return 1.0 / (gamma(alpha) ** 2 * 2 * alpha * (2 * alpha - 1))


def kappa2_sq(alpha: float, q: QuadConfig | None = None) -> float:
    """``kappa_2^2(alpha)``."""
    return _integrate("2", alpha, q).value


def kappa_table(alphas, q: QuadConfig | None = None) -> list[dict]:
    """Rows ``(alpha, kappa1_sq, kappa11_sq, kappa2_sq, tail_estimate)``.

    ``tail_estimate`` is the larger of the two tail bounds.
    """
    rows = []
    for a in alphas:
        r11 = _integrate("11", float(a), q)
        r2 = _integrate("2", float(a), q)
        rows.append(
            {
                "alpha": float(a),
                "kappa1_sq": r11.value + _kappa1_gap(float(a)),
                "kappa11_sq": r11.value,
                "kappa2_sq": r2.value,
                "tail_estimate": max(r11.tail_estimate, r2.tail_estimate),
            }
        )
    return rows
