r"""Gamma and Mittag-Leffler functions.

The two-parameter Mittag-Leffler function is evaluated by its power series

.. math::

    E_{a,b}(z) = \sum_{k \ge 0} \frac{z^k}{\Gamma(ak + b)},

which converges fast for the moderate arguments met by the kernel
``u**(alpha-1) * E_{alpha,alpha}(A u**alpha)`` on ``[0, 1]``.  Matrix
arguments use an eigendecomposition when symmetric and the matrix series
otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidParams, NonConvergent

__all__ = [
    "MlParams",
    "gamma",
    "rgamma",
    "ml_scalar",
    "ml_scalar_extended",
    "ml_matrix",
    "ml_array",
    "ml_matrix_scaled",
]

DEFAULT_TOL = 1e-12
DEFAULT_MAX_TERMS = 500

# Taylor coefficients of 1/Gamma(1 + e) about e = 0; on |e| <= 1/2 the
# truncation error is below 1e-24.
_RGAMMA_TAYLOR = np.array(
    [
        1.0,
        0.57721566490153286061,
        -0.65587807152025388108,
        -0.042002635034095235529,
        0.1665386113822914895,
        -0.042197734555544336748,
        -0.0096219715278769735621,
        0.0072189432466630995424,
        -0.0011651675918590651121,
        -0.00021524167411495097282,
        0.00012805028238811618615,
        -0.000020134854780788238656,
        -1.2504934821426706573e-6,
        1.1330272319816958824e-6,
        -2.0563384169776071035e-7,
        6.1160951044814158179e-9,
        5.0020076444692229301e-9,
        -1.1812745704870201446e-9,
        1.0434267116911005105e-10,
        7.782263439905071254e-12,
        -3.6968056186422057082e-12,
        5.100370287454475979e-13,
        -2.0583260535665067832e-14,
        -5.3481225394230179824e-15,
        1.2267786282382607902e-15,
    ]
)
_EPS = np.finfo(float).eps
# 1/Gamma underflows to zero past this point
_GAMMA_OVERFLOW = 171.7


def _rgamma_positive(x):
    # x >= 1/2: shift into [1/2, 3/2), evaluate the Taylor series, then recur
    x = np.asarray(x, dtype=float)
    shift = np.floor(x - 0.5)
    base = x - shift
    val = np.polynomial.polynomial.polyval(base - 1.0, _RGAMMA_TAYLOR)
    steps = int(shift.max()) if shift.size else 0
    if steps:
        prod = np.ones_like(x)
        with np.errstate(over="ignore"):
            for i in range(steps):
                m = shift > i
                prod[m] *= base[m] + i
        val = val / prod
    return val


def rgamma(x):
    """Reciprocal Gamma function ``1 / Gamma(x)``.

    Entire, so poles of Gamma give an exact zero.  ``1/Gamma`` is summed from
    its Taylor series about 1 on ``[1/2, 3/2)`` and moved elsewhere with
    ``Gamma(x + 1) = x Gamma(x)``; arguments below 1/2 use reflection.
    At positive integers the result is the correctly rounded ``1/(n-1)!``.
    """
    arr = np.asarray(x, dtype=float)
    out = np.zeros_like(arr)
    small = arr < 0.5
    pole = small & (arr == np.floor(arr))
    big = ~small & (arr < _GAMMA_OVERFLOW)
    out[big] = _rgamma_positive(arr[big])
    refl = small & ~pole
    if np.any(refl):
        xr = arr[refl]
        out[refl] = np.sin(math.pi * xr) / (math.pi * _rgamma_positive(1.0 - xr))
    return out if out.ndim else float(out)


def gamma(x):
    """Gamma function, ``1 / rgamma(x)``; ``inf`` at the poles."""
    r = np.asarray(rgamma(x))
    with np.errstate(divide="ignore"):
        out = np.where(r == 0.0, np.inf, 1.0 / np.where(r == 0.0, 1.0, r))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MlParams:
    """Parameters of ``E_{a,b}``: orders plus the series stopping controls."""

    a: float
    b: float
    tol: float = DEFAULT_TOL
    max_terms: int = DEFAULT_MAX_TERMS

    def __post_init__(self):
        if not (0.0 < self.a <= 1.0):
            raise InvalidParams(f"order a must lie in (0, 1], got {self.a}")
        if not (self.tol > 0.0):
            raise InvalidParams(f"tol must be positive, got {self.tol}")
        if int(self.max_terms) < 1:
            raise InvalidParams(f"max_terms must be >= 1, got {self.max_terms}")
        if not math.isfinite(self.b):
            raise InvalidParams(f"b must be finite, got {self.b}")


def _coefficients(p: MlParams, count: int) -> np.ndarray:
    k = np.arange(count, dtype=float)
    return rgamma(p.a * k + p.b)


def _first_regular_index(p: MlParams) -> int:
    # index after which a*k + b > 0, so term ratios behave monotonically
    return max(0, math.ceil((-p.b) / p.a) + 1) if p.b <= 0 else 0


def ml_scalar(p: MlParams, z):
    """Evaluate ``E_{a,b}(z)`` for a scalar ``z``.

    Returns a float for real ``z`` and a complex number otherwise.  Half of
    ``tol`` is spent on truncation: the series stops once the first
    neglected term, inflated by a geometric tail factor, drops below
    ``tol/2`` times the partial sum.  If the rounding error of the
    double-precision sum (term mass times machine epsilon) could exceed the
    other half, the same series is re-summed in multiprecision.

    Raises
    ------
    NonConvergent
        If ``max_terms`` is reached before the tail bound is met.
    """
    is_complex = isinstance(z, complex) or np.iscomplexobj(z)
    z = complex(z) if is_complex else float(z)
    if not math.isfinite(abs(z)):
        raise InvalidParams("argument must be finite")
    try:
        return _ml_scalar_double(p, z, is_complex)
    except OverflowError:
        return ml_scalar_extended(p, z)


def _ml_scalar_double(p, z, is_complex):
    coef = _coefficients(p, p.max_terms + 2)
    k0 = _first_regular_index(p)
    terms = []
    magnitude = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(p.max_terms):
            t = (z**k if k else 1.0) * coef[k]
            terms.append(t)
            magnitude += abs(t)
            if not math.isfinite(magnitude):
                return ml_scalar_extended(p, z)
            if k < k0:
                continue
            t1 = abs(z ** (k + 1) * coef[k + 1])
            t2 = abs(z ** (k + 2) * coef[k + 2])
            total = _sum(terms, is_complex)
            if t1 == 0.0:
                if z == 0:
                    return total
                if p.a * (k + 1) + p.b >= _GAMMA_OVERFLOW:
                    # 1/Gamma underflowed, the zero is not a pole
                    return ml_scalar_extended(p, z)
                continue
            ratio = t2 / t1
            if ratio < 1.0 and t1 / (1.0 - ratio) <= 0.5 * p.tol * abs(total):
                if 2.0 * _EPS * magnitude > 0.5 * p.tol * abs(total):
                    return ml_scalar_extended(p, z)
                return total
    raise NonConvergent(f"E_({p.a},{p.b})({z}) needs more than {p.max_terms} terms")


def ml_scalar_extended(p: MlParams, z, guard_digits: int = 20):
    """Sum the ``E_{a,b}`` series in multiprecision arithmetic.

    The working precision is raised by the number of digits the alternating
    terms are expected to cancel, estimated from ``exp(|z|**(1/a))``.
    Used by :func:`ml_scalar` when double precision cannot reach ``tol``.
    """
    import mpmath

    is_complex = isinstance(z, complex) or np.iscomplexobj(z)
    mag = abs(z)
    lost = mag ** (1.0 / p.a) / math.log(10.0) if mag else 0.0
    digits = max(int(-math.log10(p.tol)), 15) + guard_digits
    with mpmath.workdps(int(lost) + digits):
        a, b = mpmath.mpf(p.a), mpmath.mpf(p.b)
        zz = mpmath.mpc(z) if is_complex else mpmath.mpf(z)
        total = mpmath.mpf(0)
        zk = mpmath.mpf(1)
        threshold = mpmath.mpf(p.tol) / 4
        prev = None
        for k in range(p.max_terms):
            t = zk * mpmath.rgamma(a * k + b)
            total += t
            zk *= zz
            # the terms decrease geometrically once a*k exceeds |z|**(1/a)
            if a * k > lost * math.log(10.0) + 1 and prev is not None:
                if abs(t) + abs(prev) <= threshold * abs(total):
                    break
            prev = t
        else:
            raise NonConvergent(
                f"E_({p.a},{p.b})({z}) needs more than {p.max_terms} terms"
            )
        return complex(total) if is_complex else float(total)


def _sum(terms, is_complex):
    if is_complex:
        return complex(math.fsum(t.real for t in terms), math.fsum(t.imag for t in terms))
    return math.fsum(terms)


def ml_array(p: MlParams, z) -> np.ndarray:
    """Vectorised ``E_{a,b}`` for a real array of arguments.

    Same stopping rule as :func:`ml_scalar`, applied until every entry has
    converged.  Intended for kernel tabulation where ``|z|`` stays moderate.
    """
    z = np.asarray(z, dtype=float)
    flat = z.ravel()
    coef = _coefficients(p, p.max_terms + 2)
    k0 = _first_regular_index(p)
    total = np.zeros_like(flat)
    magnitude = np.zeros_like(flat)
    done = flat == 0.0
    out = np.full_like(flat, coef[0])
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for k in range(p.max_terms):
            term = np.power(flat, k) * coef[k] if k else np.full_like(flat, coef[0])
            total = total + term
            magnitude = magnitude + np.abs(term)
            if k < k0:
                continue
            if p.a * (k + 2) + p.b >= _GAMMA_OVERFLOW:
                break  # 1/Gamma underflows; the rest go through ml_scalar
            t1 = np.abs(np.power(flat, k + 1) * coef[k + 1])
            t2 = np.abs(np.power(flat, k + 2) * coef[k + 2])
            ratio = np.where(t1 > 0, t2 / t1, 0.0)
            bound = np.where(t1 > 0, t1 / (1.0 - ratio), 0.0)
            ok = (ratio < 1.0) & (bound <= 0.5 * p.tol * np.abs(total))
            ok |= (t1 == 0.0) & (t2 == 0.0)
            new = ok & ~done
            out[new] = total[new]
            done |= ok
            if done.all():
                break
        # entries whose rounding error could exceed the tolerance
        done &= ~(2.0 * _EPS * magnitude > 0.5 * p.tol * np.abs(out)) | (flat == 0.0)
    for i in np.flatnonzero(~done):
        out[i] = ml_scalar(p, float(flat[i]))
    return out.reshape(z.shape)


def _is_symmetric(M: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(M))))
    return bool(np.max(np.abs(M - M.T)) <= 1e-12 * scale)


def _check_square(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    return M


def ml_matrix(p: MlParams, M) -> np.ndarray:
    """Evaluate ``E_{a,b}(M)`` for a real square matrix.

    Symmetric input goes through ``M = Q diag(lam) Q^T``; anything else uses
    the truncated matrix series with a spectral-norm tail bound.
    """
    M = _check_square(M)
    return ml_matrix_scaled(p, M, np.ones(1))[0]


def ml_matrix_scaled(p: MlParams, M, scales) -> np.ndarray:
    """Evaluate ``E_{a,b}(M * s)`` for every scalar ``s`` in ``scales``.

    Returns an array of shape ``(len(scales), d, d)``.  This is the batch
    entry point used for kernel tables, where ``s = u**alpha``.
    """
    M = _check_square(M)
    s = np.asarray(scales, dtype=float).ravel()
    d = M.shape[0]
    if _is_symmetric(M):
        lam, Q = np.linalg.eigh(0.5 * (M + M.T))
        vals = ml_array(p, np.outer(s, lam))  # (len(s), d)
        return np.einsum("ik,nk,jk->nij", Q, vals, Q)
    return _matrix_series(p, M, s, d)


def _matrix_series(p, M, s, d):
    coef = _coefficients(p, p.max_terms + 2)
    k0 = _first_regular_index(p)
    norm = float(np.linalg.norm(M, 2))
    smax = float(np.max(np.abs(s))) if s.size else 0.0
    total = np.zeros((s.size, d, d))
    power = np.eye(d)
    for k in range(p.max_terms):
        total += np.multiply.outer(coef[k] * s**k, power)
        power = power @ M
        if k < k0:
            continue
        t1 = abs(coef[k + 1]) * (norm * smax) ** (k + 1)
        t2 = abs(coef[k + 2]) * (norm * smax) ** (k + 2)
        if t1 == 0.0:
            if t2 == 0.0:
                return total
            continue
        ratio = t2 / t1
        partial = np.min(np.linalg.norm(total, 2, axis=(1, 2)))
        if ratio < 1.0 and t1 / (1.0 - ratio) <= p.tol * partial:
            return total
    raise NonConvergent(f"matrix E_({p.a},{p.b}) did not converge within {p.max_terms} terms")
