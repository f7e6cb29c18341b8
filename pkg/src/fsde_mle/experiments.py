"""Experiment drivers shared by the command line and the acceptance suite.

Each driver returns an :class:`~fsde_mle.analysis.ExperimentReport` whose
tables map directly onto the CSV schemas of the command line.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats

from . import analysis, constants, kernel, schemes
from .models import builtin_model

__all__ = [
    "coarsen",
    "strong_order",
    "mn_covariance",
    "error_distribution",
    "y_limit",
    "kernel_check",
]


def coarsen(bundle: schemes.PathBundle, n: int, refine: int) -> schemes.PathBundle:
    """Re-express the fine Brownian path of ``bundle`` on ``n`` cells refined ``refine`` times.

    The fine grid of the result must divide the fine grid of ``bundle``;
    increments are summed, so every derived bundle shares one Brownian path.
    """
    total = bundle.n * bundle.refine
    fine_n = n * refine
    if total % fine_n:
        raise ValueError(f"grid {fine_n} does not divide {total}")
    g = total // fine_n
    P, m = bundle.paths, bundle.m
    fine = bundle.fine_increments if g == 1 else \
        bundle.fine_increments.reshape(P, fine_n, g, m).sum(axis=2)
    coarse = fine if refine == 1 else fine.reshape(P, n, refine, m).sum(axis=2)
    return schemes.PathBundle(bundle.seed, n, refine, bundle.T, bundle.path_offset, coarse, fine)


def strong_order(model_name: str, alpha: float, ns, paths: int, seed: int,
                 refine: int = 32) -> analysis.ExperimentReport:
    """L2 error at ``T`` of the MLE against the fine-grid reference, and the fitted order.

    One Brownian path per sample is drawn on the finest grid and summed
    down for every ``n``, so all grid sizes see the same noise.
    """
    model = builtin_model(model_name, alpha)
    ns = sorted(int(n) for n in ns)
    n_max = ns[-1]
    for n in ns:
        if n_max % n:
            raise ValueError("every n must divide the largest n")
    master = schemes.generate_increments(seed, n_max, model.m, refine, paths, model.T)
    rows = []
    for n in ns:
        b = coarsen(master, n, refine)
        Xh = schemes.solve_mle(model, kernel.build_kernel_table(model, n, with_cells=False), b)
        Xr = schemes.reference_solution(model, b)
        err, se = analysis.l2_error(Xr[:, -1] - Xh[:, -1])
        rows.append({"n": n, "h": model.T / n, "l2_error": err, "stderr": se})
    fit = analysis.fit_order([r["h"] for r in rows], [r["l2_error"] for r in rows])
    target = alpha - 0.5
    return analysis.ExperimentReport(
        "strong-order",
        {"model": model_name, "alpha": alpha, "n": ns, "paths": paths, "seed": seed,
         "refine": refine},
        error_table=rows,
        fit=fit,
        passed=abs(fit.slope - target) <= 0.1,
        notes=[f"target slope {target:g}, sample size {paths}"],
    )


def mn_covariance(alpha: float, ns, A=(( -1.0,),), t: float = 1.0) -> analysis.ExperimentReport:
    """Deterministic ``E[M_n^2]`` against ``kappa2^2`` along ``ns``."""
    target = constants.kappa2_sq(alpha)
    rows = []
    for n in ns:
        v = analysis.mn_covariance_quadrature((0, 0, 0, 0, 0, 0), alpha, A, int(n), t)
        rows.append({"n": int(n), "value": v, "target": target, "gap": abs(v - target) / target})
    gaps = [r["gap"] for r in rows]
    monotone = all(b <= a * 1.01 for a, b in zip(gaps, gaps[1:]))
    return analysis.ExperimentReport(
        "mn-cov",
        {"alpha": alpha, "n": [int(n) for n in ns], "A": np.asarray(A).tolist(), "t": t},
        covariance_table=rows,
        passed=monotone and gaps[-1] <= 0.05,
        notes=["values are quadrature results, relative tolerance about 1e-10"],
    )


def normalized_remainder(alpha: float, n: int, paths: int, seed: int,
                         model_name: str = "additive_scalar") -> np.ndarray:
    """Samples of ``n^(alpha-1/2) (Xtilde_T - Xhat_T)`` on one seed."""
    model = builtin_model(model_name, alpha)
    table = kernel.build_kernel_table(model, n)
    b = schemes.generate_increments(seed, n, model.m, 1, paths, model.T)
    Xh = schemes.solve_mle(model, table, b)
    ig = schemes.sample_interval_gaussians(model, table, b, targets=[n])
    Xt = schemes.solve_auxiliary(model, table, b, ig, Xh)
    return n ** (alpha - 0.5) * (Xt[:, -1] - Xh[:, -1])


def error_distribution(alpha: float, n: int, paths: int, seeds,
                       model_name: str = "additive_scalar") -> analysis.ExperimentReport:
    """KS and variance checks of the normalized remainder at ``T`` (scalar additive noise).

    The KS reference is ``N(0, E[M_n^2])`` from quadrature; the variance is
    also compared with the limit ``kappa2^2 sigma^2`` (``sigma = 1``).
    Each seed is judged on its own; the experiment passes if at least two
    of three seeds (a majority in general) pass both checks.
    """
    model = builtin_model(model_name, alpha)
    if model.d != 1 or model.m != 1:
        raise ValueError("error-dist supports scalar models only")
    sigma2 = float(model.diffusion(model.x0)[0, 0] ** 2)
    quad_var = analysis.mn_covariance_quadrature((0, 0, 0, 0, 0, 0), alpha, model.A, n, model.T)
    limit_var = constants.kappa2_sq(alpha) * sigma2
    tests, votes = [], 0
    for s in seeds:
        z = normalized_remainder(alpha, n, paths, int(s), model_name)
        D, p = analysis.ks_test(z, stats.norm(scale=math.sqrt(quad_var)).cdf)
        mom = analysis.moment_summary(z)
        var_ok = abs(mom.variance - limit_var) <= 3 * mom.se_variance
        ok = p > 0.01 and var_ok
        votes += ok
        tests.append({"seed": int(s), "t": model.T, "sample_count": mom.count,
                      "emp_var": mom.variance, "emp_var_se": mom.se_variance,
                      "target_var": quad_var, "limit_var": limit_var,
                      "ks_stat": D, "p_value": p, "passed": ok})
    return analysis.ExperimentReport(
        "error-dist",
        {"model": model_name, "alpha": alpha, "n": n, "paths": paths,
         "seed": [int(s) for s in seeds]},
        distribution_tests=tests,
        passed=votes * 2 > len(tests),
    )


def y_limit(model_name: str, alpha: float, ns, paths: int, seed: int, refine: int = 32,
            n_limit: int = 256) -> analysis.ExperimentReport:
    """Limit SVE output and the normalized gap between reference and auxiliary scheme.

    For each ``n``: ``Var(n^(alpha-1/2) (X_ref,T - Xtilde_T))`` with the
    auxiliary draws conditioned on the reference's fine increments.  The
    limit equation is solved on ``n_limit`` steps, driven by the reference
    path on that grid.
    """
    model = builtin_model(model_name, alpha)
    rows = []
    for n in sorted(int(n) for n in ns):
        b = schemes.generate_increments(seed, n, model.m, refine, paths, model.T)
        table = kernel.build_kernel_table(model, n)
        Xh = schemes.solve_mle(model, table, b)
        ig = schemes.sample_interval_gaussians(model, table, b, targets=[n])
        Xt = schemes.solve_auxiliary(model, table, b, ig, Xh)
        Xr = schemes.reference_solution(model, b)
        gap = n ** (alpha - 0.5) * (Xr[:, -1] - Xt[:, -1])
        mom = analysis.moment_summary(np.sum(gap, axis=-1) if gap.ndim > 1 else gap)
        rows.append({"n": n, "sample_count": paths, "var_gap": mom.variance,
                     "var_gap_se": mom.se_variance})
    # limit equation on the n_limit grid, driven by a fine reference path
    sub = max(1, n_limit // refine)
    b = schemes.generate_increments(seed, sub, model.m, n_limit // sub, paths, model.T)
    _, Xf = schemes.reference_solution(model, b, return_fine=True)
    kap1 = math.sqrt(constants.kappa1_sq(alpha))
    Bi = schemes.generate_b_increments(seed, n_limit, model.m, paths, model.T)
    Y = schemes.solve_limit_sve(model, kernel.build_kernel_table(model, n_limit, with_cells=False),
                                Xf, b.fine_increments, Bi, kap1)
    yT = Y[:, -1]
    mom = analysis.moment_summary(yT[:, 0])
    report = analysis.ExperimentReport(
        "y-limit",
        {"model": model_name, "alpha": alpha, "n": sorted(int(n) for n in ns), "paths": paths,
         "seed": seed, "refine": refine, "n_limit": n_limit},
        error_table=rows,
        distribution_tests=[{"n_limit": n_limit, "sample_count": paths,
                             "var_limit": mom.variance, "var_limit_se": mom.se_variance,
                             "max_abs_limit": float(np.max(np.abs(Y)))}],
    )
    report.notes.append("the reference is a fine-grid MLE, so var_gap carries its discretization "
                        "error scaled by n^(2 alpha - 1)")
    return report


def kernel_check(model_name: str, alpha: float, ns, t: float = 1.0) -> analysis.ExperimentReport:
    """Regularity integrals over ``ns`` with fitted log-log slopes."""
    model = builtin_model(model_name, alpha)
    ns = sorted(int(n) for n in ns)
    values = np.array([kernel.regularity_integrals(model, n, t) for n in ns])
    hs = [model.T / n for n in ns]
    expected = [alpha, 2 * alpha - 1, alpha, 2 * alpha - 1]
    rows, ok = [], True
    for i in range(4):
        fit = analysis.fit_order(hs, values[:, i])
        ok &= abs(fit.slope - expected[i]) <= 0.05
        rows += [{"n": n, "integral_id": i + 1, "value": float(values[k, i]),
                  "fitted_slope": fit.slope} for k, n in enumerate(ns)]
    return analysis.ExperimentReport(
        "kernel-check", {"model": model_name, "alpha": alpha, "n": ns, "t": t},
        error_table=rows, passed=bool(ok))
