"""Deterministic covariance quadrature, order fitting and distribution tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _quad
from .errors import DegenerateInput, NotGridPoint, TooFewSamples
from .kernel import kernel_values

__all__ = [
    "ExperimentReport",
    "FitResult",
    "Moments",
    "mn_covariance_quadrature",
    "fit_order",
    "kolmogorov_sf",
    "ks_test",
    "moment_summary",
    "l2_error",
]


@dataclass
class ExperimentReport:
    """Summary of one experiment.

    Every statistic is stored together with its sample size and a
    standard error (or the quadrature tolerance for deterministic values).
    ``passed`` is ``None`` when the experiment has no threshold.
    """

    name: str
    config: dict
    error_table: list = field(default_factory=list)
    fit: "FitResult | None" = None
    covariance_table: list = field(default_factory=list)
    distribution_tests: list = field(default_factory=list)
    passed: bool | None = None
    notes: list = field(default_factory=list)


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    stderr: float
    points: int


@dataclass(frozen=True)
class Moments:
    count: int
    mean: float
    variance: float
    skewness: float
    kurtosis: float
    se_mean: float
    se_variance: float
    se_skewness: float
    se_kurtosis: float


# M_n covariance -------------------------------------------------------------


def _grid_index(t, h):
    k = round(t / h)
    if k < 1 or abs(k * h - t) > 1e-9 * h:
        raise NotGridPoint(f"t={t} is not a positive grid point for h={h}")
    return k


def mn_covariance_quadrature(indices, alpha: float, A, n: int, t: float, t2: float | None = None,
                             T: float = 1.0) -> float:
    """Exact covariance of the normalized remainder martingale.

    For ``indices = (i1, j1, i2, j2, l1, l2)`` returns

        n^(2 alpha - 1) int_0^t (K^{i1 j1}(t - s) - K^{i1 j1}(t - floor(s)))
                              (K^{i2 j2}(t2 - s) - K^{i2 j2}(t2 - floor(s))) ds

    with ``t2 = t`` by default and ``t <= t2`` both grid points.  Different
    noise indices ``l1 != l2`` give exactly 0.  Each cell uses ``w =
    t_{j+1} - s`` with a rule graded toward ``w = 0``, where the last cell
    of the shorter horizon is singular.
    """
    i1, j1, i2, j2, l1, l2 = indices
    if l1 != l2:
        return 0.0
    A = np.atleast_2d(np.asarray(A, dtype=float))
    h = T / n
    k1 = _grid_index(t, h)
    k2 = k1 if t2 is None else _grid_index(t2, h)
    if k2 < k1:
        k1, k2 = k2, k1
        i1, j1, i2, j2 = i2, j2, i1, j1
    w, wt = _quad.graded(h, 2 * alpha - 1, levels=40, q=16)

    def diffs(k, i, j):
        # rows: cells j_cell = 0 .. k1-1, lag r = k - j_cell
        r = k - np.arange(k1)
        u = ((r - 1) * h)[:, None] + w[None, :]
        K = kernel_values(alpha, A, u.ravel())[:, i, j].reshape(u.shape)
        ref = kernel_values(alpha, A, r * h)[:, i, j]
        return K - ref[:, None]

    D1 = diffs(k1, i1, j1)
    D2 = D1 if (k2, i2, j2) == (k1, i1, j1) else diffs(k2, i2, j2)
    total = math.fsum((D1 * D2) @ wt)
    return float(n ** (2 * alpha - 1) * total)


# regression -----------------------------------------------------------------


def fit_order(h_values, errors, confidence: float = 0.95) -> FitResult:
    """Least-squares slope of ``log(error)`` against ``log(h)``.

    The confidence interval uses the residual variance and Student's t
    with ``points - 2`` degrees of freedom.
    """
    h = np.asarray(h_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if h.shape != e.shape or h.ndim != 1:
        raise DegenerateInput("h_values and errors must be equal-length lists")
    if h.size < 4:
        raise DegenerateInput("need at least 4 points to fit an order")
    if np.any(~np.isfinite(e)) or np.any(e <= 0) or np.any(h <= 0):
        raise DegenerateInput("all step sizes and errors must be positive and finite")
    if np.unique(h).size < 2:
        raise DegenerateInput("step sizes must not all coincide")
    res = stats.linregress(np.log(h), np.log(e))
    half = stats.t.ppf(0.5 + confidence / 2, h.size - 2) * res.stderr
    return FitResult(float(res.slope), float(res.intercept), float(res.slope - half),
                     float(res.slope + half), float(res.stderr), int(h.size))


def l2_error(diff) -> tuple[float, float]:
    """Root mean square of ``diff`` over paths and its delta-method standard error.

    ``diff`` is ``(paths,)`` or ``(paths, d)``; vector errors use the Euclidean norm.
    """
    diff = np.asarray(diff, dtype=float)
    sq = diff**2 if diff.ndim == 1 else np.sum(diff**2, axis=-1)
    ms = float(np.mean(sq))
    rms = math.sqrt(ms)
    se = float(np.std(sq, ddof=1) / math.sqrt(sq.size)) / (2 * rms) if rms > 0 else 0.0
    return rms, se


# distribution tests ---------------------------------------------------------


def kolmogorov_sf(x: float, terms: int = 100) -> float:
    """``P(K > x)`` for the Kolmogorov distribution, by its alternating series."""
    if x <= 0.2:
        # the series converges slowly here and the value is 1 to double precision
        return 1.0
    k = np.arange(1, terms + 1)
    s = 2.0 * math.fsum((-1.0) ** (k - 1) * np.exp(-2.0 * k**2 * x * x))
    return min(1.0, max(0.0, s))


def ks_test(samples, cdf) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test against a continuous ``cdf``.

    Returns ``(D, p)`` with ``D = sup |F_emp - F|`` and ``p`` from the
    asymptotic law of ``sqrt(N) D``.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    N = x.size
    if N < 100:
        raise TooFewSamples(f"KS test needs at least 100 samples, got {N}")
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, N + 1)
    D = float(max(np.max(i / N - F), np.max(F - (i - 1) / N)))
    return D, kolmogorov_sf(math.sqrt(N) * D)


def moment_summary(samples) -> Moments:
    """Unbiased mean, variance, skewness and (non-excess) kurtosis with standard errors.

    Skewness and kurtosis are NaN for constant samples or when the sample is
    too small for the unbiased formulas (fewer than 3 or 4 values).
    """
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 2:
        raise TooFewSamples("need at least 2 samples")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    c = x - mean
    m4 = float(np.mean(c**4))
    constant = var == 0.0
    skew = float(stats.skew(x, bias=False)) if n >= 3 and not constant else math.nan
    kurt = float(stats.kurtosis(x, fisher=False, bias=False)) if n >= 4 and not constant else math.nan
    se_skew = math.sqrt(6.0 * n * (n - 1) / ((n - 2) * (n + 1) * (n + 3))) if n >= 3 else math.nan
    se_kurt = (2 * se_skew * math.sqrt((n * n - 1) / ((n - 3) * (n + 5)))) if n >= 4 else math.nan
    se_var = math.sqrt(max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n)
    return Moments(n, mean, var, skew, kurt, math.sqrt(var / n), se_var, se_skew, se_kurt)
