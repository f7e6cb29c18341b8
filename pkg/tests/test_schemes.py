import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from fsde_mle import analysis, constants, kernel, schemes
from fsde_mle.errors import CapExceeded, DimensionMismatch, InvalidParams, NonFinite
from fsde_mle.mlf import MlParams, ml_scalar
from fsde_mle.models import ModelSpec, builtin_model

from . import oracles


def _custom(base, **kw):
    fields = dict(alpha=base.alpha, A=base.A, drift=base.drift, diffusion=base.diffusion,
                  drift_jacobian=base.drift_jacobian, diffusion_jacobian=base.diffusion_jacobian,
                  x0=base.x0)
    fields.update(kw)
    return ModelSpec(**fields)


def _noise_free(name="coupled_2d", alpha=0.75):
    base = builtin_model(name, alpha)
    d = base.d
    return _custom(base, drift=lambda x: np.zeros_like(x),
                   diffusion=lambda x: np.zeros(x.shape + (base.m,)),
                   drift_jacobian=lambda x: np.zeros(x.shape + (d,)),
                   diffusion_jacobian=lambda x: np.zeros(x.shape + (base.m, d)))


def _linear_diffusion(alpha=0.75, c=0.8):
    base = builtin_model("bilinear_scalar", alpha)
    return _custom(base, drift=lambda x: np.zeros_like(x),
                   diffusion=lambda x: (c * x)[..., None],
                   drift_jacobian=lambda x: np.zeros(x.shape + (1,)),
                   diffusion_jacobian=lambda x: np.full(x.shape + (1, 1), c))


# increments -------------------------------------------------------------------


def test_increments_refine_one_shares_array():
    b = schemes.generate_increments(3, 8, 2, 1, paths=4)
    assert b.fine_increments is b.increments


def test_increments_deterministic_and_coupled():
    b1 = schemes.generate_increments(11, 4, 1, 8, paths=5)
    b2 = schemes.generate_increments(11, 4, 1, 8, paths=5)
    np.testing.assert_array_equal(b1.fine_increments, b2.fine_increments)
    sums = b1.fine_increments.reshape(5, 4, 8, 1).sum(axis=2)
    np.testing.assert_array_equal(b1.increments, sums)


def test_increments_path_subsets_regenerate():
    full = schemes.generate_increments(5, 6, 2, 2, paths=10)
    part = schemes.generate_increments(5, 6, 2, 2, paths=3, path_offset=4)
    np.testing.assert_array_equal(full.fine_increments[4:7], part.fine_increments)


def test_increments_distribution():
    b = schemes.generate_increments(0, 16, 1, 1, paths=2000)
    x = b.increments.ravel() / math.sqrt(b.h)
    mom = analysis.moment_summary(x)
    assert abs(mom.mean) < 3 * mom.se_mean
    assert abs(mom.variance - 1) < 3 * mom.se_variance


def test_increments_invalid():
    with pytest.raises(InvalidParams):
        schemes.generate_increments(0, 0, 1)


# MLE ----------------------------------------------------------------------------


def test_mle_single_step_additive():
    model = builtin_model("additive_scalar", 0.75)
    b = schemes.generate_increments(1, 1, 1, paths=3)
    X = schemes.solve_mle(model, kernel.build_kernel_table(model, 1), b)
    K = kernel.kernel_eval(0.75, model.A, 1.0)[0, 0]
    np.testing.assert_allclose(X[:, 1, 0], K * b.increments[:, 0, 0], rtol=1e-14)


def test_mle_noise_free_is_mittag_leffler_decay():
    model = _noise_free()
    n = 16
    b = schemes.generate_increments(1, n, 2, paths=2)
    X = schemes.solve_mle(model, kernel.build_kernel_table(model, n), b)
    lam, Q = np.linalg.eigh(model.A)
    for k in (1, 5, 16):
        t = k / n
        E = Q @ np.diag([ml_scalar(MlParams(0.75, 1.0), v * t**0.75) for v in lam]) @ Q.T
        ref = E @ model.x0
        assert np.linalg.norm(X[0, k] - ref) <= kernel.KERNEL_TOL * np.linalg.norm(ref)


def test_mle_matches_naive_recursion():
    alpha, n = 0.7, 4
    model = builtin_model("bilinear_scalar", alpha)
    b = schemes.generate_increments(9, n, 1, paths=2)
    X = schemes.solve_mle(model, kernel.build_kernel_table(model, n), b)
    h = 1 / n

    def K(u):
        return u ** (alpha - 1) * oracles.ml_series(alpha, alpha, -(u**alpha))

    for p in range(2):
        x = [1.0]
        for k in range(1, n + 1):
            s = oracles.ml_series(alpha, 1.0, -((k * h) ** alpha)) * 1.0
            for j in range(k):
                s += K((k - j) * h) * (h * 0.5 * math.sin(x[j])
                                       + (0.5 * math.cos(x[j]) + 1) * b.increments[p, j, 0])
            x.append(s)
        # a few kernel values per step, each good to the kernel tolerance
        np.testing.assert_allclose(X[p, :, 0], x, rtol=10 * kernel.KERNEL_TOL)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_mle_nonfinite_is_reported():
    base = builtin_model("bilinear_scalar", 0.75)
    model = _custom(base, drift=lambda x: np.full_like(x, np.inf))
    b = schemes.generate_increments(0, 4, 1, paths=3)
    with pytest.raises(NonFinite) as exc:
        schemes.solve_mle(model, kernel.build_kernel_table(model, 4), b)
    assert list(exc.value.paths) == [0, 1, 2]


def test_mle_rejects_mismatched_table_and_positive_a():
    model = builtin_model("bilinear_scalar", 0.75)
    b = schemes.generate_increments(0, 4, 1)
    with pytest.raises(InvalidParams):
        schemes.solve_mle(model, kernel.build_kernel_table(model.with_alpha(0.6), 4), b)
    bad = _custom(model, A=[[0.5]])
    with pytest.raises(InvalidParams):
        schemes.solve_mle(bad, kernel.build_kernel_table(bad, 4), b)


def test_worker_count_does_not_change_output(monkeypatch):
    model = builtin_model("coupled_2d", 0.75)
    table = kernel.build_kernel_table(model, 16)
    b = schemes.generate_increments(2, 16, 2, paths=600)
    monkeypatch.setenv("FSDE_MLE_WORKERS", "1")
    x1 = schemes.solve_mle(model, table, b)
    monkeypatch.setenv("FSDE_MLE_WORKERS", "3")
    x3 = schemes.solve_mle(model, table, b)
    np.testing.assert_array_equal(x1, x3)


def test_hoelder_type_path_regularity():
    alpha = 0.75
    model = builtin_model("bilinear_scalar", alpha)
    n = 128
    b = schemes.generate_increments(4, n, 1, paths=400)
    X = schemes.solve_mle(model, kernel.build_kernel_table(model, n, with_cells=False), b)[:, :, 0]
    lags = np.array([1, 2, 4, 8, 16])
    inc = [math.sqrt(np.mean((X[:, 64 + L] - X[:, 64]) ** 2)) for L in lags]
    fit = analysis.fit_order(lags / n, inc)
    assert fit.slope >= alpha - 0.5 - 0.1


# reference ----------------------------------------------------------------------


def test_reference_with_refine_one_equals_mle():
    model = builtin_model("bilinear_scalar", 0.75)
    b = schemes.generate_increments(0, 8, 1, 1, paths=4)
    X = schemes.solve_mle(model, kernel.build_kernel_table(model, 8), b)
    np.testing.assert_array_equal(schemes.reference_solution(model, b), X)


def test_reference_noise_free_independent_of_refinement():
    model = _noise_free("bilinear_scalar")
    r4 = schemes.reference_solution(model, schemes.generate_increments(0, 4, 1, 4))
    r32 = schemes.reference_solution(model, schemes.generate_increments(0, 4, 1, 32))
    np.testing.assert_allclose(r4, r32, rtol=1e-12)


def test_reference_resolution_adequate():
    from fsde_mle.experiments import coarsen

    model = builtin_model("bilinear_scalar", 0.75)
    master = schemes.generate_increments(6, 8, 1, 64, paths=300)
    b32 = coarsen(master, 8, 32)
    r64 = schemes.reference_solution(model, master)
    r32 = schemes.reference_solution(model, b32)
    xh = schemes.solve_mle(model, kernel.build_kernel_table(model, 8), b32)
    ref_gap = analysis.l2_error(r64[:, -1] - r32[:, -1])[0]
    coarse = analysis.l2_error(r64[:, -1] - xh[:, -1])[0]
    assert ref_gap < 0.2 * coarse


# interval Gaussians --------------------------------------------------------------


def test_cross_covariance_zero_matrix_closed_form():
    base = builtin_model("additive_scalar", 0.75)
    model = _custom(base, A=[[-1e-300]])
    n = 8
    b = schemes.generate_increments(0, n, 1)
    ig = schemes.sample_interval_gaussians(model, kernel.build_kernel_table(model, n), b)
    h = 1 / n
    for r in (1, 3, 8):
        exact = ((r * h) ** 0.75 - ((r - 1) * h) ** 0.75) / (0.75 * math.gamma(0.75))
        assert ig.cross[r - 1, 0] == pytest.approx(exact, rel=1e-12)


def test_interval_covariance_quadrature_and_psd():
    model = builtin_model("coupled_2d", 0.8)
    n = 6
    b = schemes.generate_increments(0, n, 2, 4)
    ig = schemes.sample_interval_gaussians(model, kernel.build_kernel_table(model, n), b)
    assert np.min(np.linalg.eigvalsh(ig.cov)) >= -1e-10
    np.testing.assert_allclose(ig.cov, ig.cov.T)
    h = 1 / n
    # rows (r - 1, a, b): compare Cov(G_2^{01}, G_5^{10}) with scipy
    f = lambda w: (kernel.kernel_eval(0.8, model.A, h + w)[0, 1]
                   * kernel.kernel_eval(0.8, model.A, 4 * h + w)[1, 0])
    ref = integrate.quad(f, 0, h, epsabs=1e-15)[0]
    assert ig.cov[1 * 4 + 1, 4 * 4 + 2] == pytest.approx(ref, rel=1e-9)
    # conditional covariance stays PSD
    cond = ig.cov - ig.cross @ ig.cross.T * (4 / h)
    assert np.min(np.linalg.eigvalsh(cond)) >= -1e-10


def test_interval_gaussian_monte_carlo_covariance():
    model = builtin_model("additive_scalar", 0.75)
    n, P = 8, 100_000
    table = kernel.build_kernel_table(model, n)
    b = schemes.generate_increments(21, n, 1, 1, paths=P)
    ig = schemes.sample_interval_gaussians(model, table, b, targets=[4, 7])
    G = ig.cell_draws(0, slice(0, P))[:, :, 0, 0, 0]  # targets 4 and 7 of cell 0
    prod = G[:, 0] * G[:, 1]
    emp, se = prod.mean(), prod.std(ddof=1) / math.sqrt(P)
    exact = ig.cov[3, 6]
    assert abs(emp - exact) <= 3 * se
    # covariance with the coarse increment
    pw = G[:, 0] * b.increments[:, 0, 0]
    assert abs(pw.mean() - ig.cross[3, 0]) <= 3 * pw.std(ddof=1) / math.sqrt(P)


def test_interval_gaussians_caps():
    model = builtin_model("additive_scalar", 0.75)
    n = 513
    b = schemes.generate_increments(0, n, 1)
    with pytest.raises(CapExceeded):
        schemes.sample_interval_gaussians(model, kernel.build_kernel_table(model, n), b)


@given(st.integers(1, 2**20))
def test_pivoted_factor_reproduces_psd(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, 6))
    B = rng.standard_normal((6, k))
    S = B @ B.T
    F = schemes._pivoted_factor(S)
    assert F.shape[1] <= k
    np.testing.assert_allclose(F @ F.T, S, atol=1e-9 * np.max(np.diag(S)))


# kernel-exact schemes ----------------------------------------------------------


def test_variant_and_auxiliary_noise_free():
    model = _noise_free()
    n = 8
    table = kernel.build_kernel_table(model, n)
    b = schemes.generate_increments(0, n, 2, paths=3)
    xh = schemes.solve_mle(model, table, b)
    ig = schemes.sample_interval_gaussians(model, table, b)
    np.testing.assert_allclose(schemes.solve_variant_kmle(model, table, b, ig), xh, rtol=1e-13)
    np.testing.assert_allclose(schemes.solve_auxiliary(model, table, b, ig, xh), xh[:, 1:],
                               rtol=1e-13)


def test_variant_one_cell_variance():
    model = builtin_model("additive_scalar", 0.75)
    P = 20_000
    table = kernel.build_kernel_table(model, 1)
    b = schemes.generate_increments(3, 1, 1, paths=P)
    ig = schemes.sample_interval_gaussians(model, table, b)
    x = schemes.solve_variant_kmle(model, table, b, ig)[:, 1, 0]
    target = integrate.quad(lambda s: kernel.kernel_eval(0.75, model.A, 1 - s)[0, 0] ** 2, 0, 1,
                            limit=200)[0]
    mom = analysis.moment_summary(x)
    assert abs(mom.variance - target) <= 3 * mom.se_variance


def test_auxiliary_additive_difference_algebra():
    model = builtin_model("additive_scalar", 0.75)
    n = 8
    table = kernel.build_kernel_table(model, n)
    b = schemes.generate_increments(5, n, 1, paths=4)
    xh = schemes.solve_mle(model, table, b)
    ig = schemes.sample_interval_gaussians(model, table, b)
    xt = schemes.solve_auxiliary(model, table, b, ig, xh)
    G = ig.materialize()[:, :, -1, 0, 0, 0]  # (paths, cells) for target n
    K = table.k_at_grid[n - np.arange(n), 0, 0]
    expect = (G - K * b.increments[:, :, 0]).sum(axis=1)
    np.testing.assert_allclose(xt[:, -1, 0] - xh[:, -1, 0], expect, atol=1e-13)


def test_auxiliary_variance_matches_quadrature():
    alpha, n, P = 0.75, 32, 4000
    model = builtin_model("additive_scalar", alpha)
    table = kernel.build_kernel_table(model, n)
    b = schemes.generate_increments(8, n, 1, paths=P)
    xh = schemes.solve_mle(model, table, b)
    ig = schemes.sample_interval_gaussians(model, table, b, targets=[n])
    xt = schemes.solve_auxiliary(model, table, b, ig, xh)
    z = n ** (alpha - 0.5) * (xt[:, -1, 0] - xh[:, -1, 0])
    mom = analysis.moment_summary(z)
    target = analysis.mn_covariance_quadrature((0,) * 6, alpha, model.A, n, 1.0)
    assert abs(mom.variance - target) <= 3 * mom.se_variance


def test_auxiliary_rejects_bad_xhat():
    model = builtin_model("additive_scalar", 0.75)
    table = kernel.build_kernel_table(model, 4)
    b = schemes.generate_increments(5, 4, 1, paths=2)
    ig = schemes.sample_interval_gaussians(model, table, b)
    with pytest.raises(DimensionMismatch):
        schemes.solve_auxiliary(model, table, b, ig, np.zeros((2, 3, 1)))


def test_variant_strong_order():
    from fsde_mle.experiments import coarsen

    alpha = 0.75
    model = builtin_model("bilinear_scalar", alpha)
    ns = [4, 8, 16, 32]
    master = schemes.generate_increments(13, 32, 1, 32, paths=300)
    errs = []
    for n in ns:
        b = coarsen(master, n, 32)
        table = kernel.build_kernel_table(model, n)
        ig = schemes.sample_interval_gaussians(model, table, b)
        xb = schemes.solve_variant_kmle(model, table, b, ig)
        errs.append(analysis.l2_error(schemes.reference_solution(model, b)[:, -1] - xb[:, -1])[0])
    fit = analysis.fit_order(1 / np.array(ns), errs)
    assert fit.slope >= alpha - 0.5 - 0.1


# limits --------------------------------------------------------------------------


def _limit_inputs(model, n, P, seed):
    b = schemes.generate_increments(seed, n, model.m, 1, paths=P)
    x = schemes.solve_mle(model, kernel.build_kernel_table(model, n), b)
    B = schemes.generate_b_increments(seed, n, model.m, P)
    return x, b.increments, B


def test_limit_sve_additive_is_zero():
    model = builtin_model("additive_scalar", 0.75)
    x, w, B = _limit_inputs(model, 32, 10, 0)
    Y = schemes.solve_limit_sve(model, kernel.build_kernel_table(model, 32), x, w, B, 1.3)
    assert np.all(Y == 0.0)


def test_limit_sve_linear_in_kappa():
    model = _linear_diffusion()
    x, w, B = _limit_inputs(model, 32, 50, 1)
    table = kernel.build_kernel_table(model, 32)
    y1 = schemes.solve_limit_sve(model, table, x, w, B, 1.0)
    y2 = schemes.solve_limit_sve(model, table, x, w, B, 2.0)
    np.testing.assert_allclose(y2, 2 * y1, rtol=1e-12, atol=1e-15)
    assert np.var(y2[:, -1]) == pytest.approx(4 * np.var(y1[:, -1]), rel=1e-10)


def test_limit_sve_bilinear_refinement_stable():
    alpha = 0.75
    model = builtin_model("bilinear_scalar", alpha)
    P, n = 1000, 128
    kap = math.sqrt(constants.kappa1_sq(alpha))
    b = schemes.generate_increments(2, n, 1, 2, paths=P)
    _, xf = schemes.reference_solution(model, b, return_fine=True)
    B2 = schemes.generate_b_increments(2, 2 * n, 1, P)
    Yf = schemes.solve_limit_sve(model, kernel.build_kernel_table(model, 2 * n), xf,
                                 b.fine_increments, B2, kap)
    Bc = B2.reshape(P, n, 2, 1, 1).sum(axis=2)
    Yc = schemes.solve_limit_sve(model, kernel.build_kernel_table(model, n), xf[:, ::2],
                                 b.increments, Bc, kap)
    vf, vc = np.var(Yf[:, -1]), np.var(Yc[:, -1])
    assert vf > 0 and abs(vf - vc) <= 0.1 * vf


def test_limit_sve_shape_check():
    model = builtin_model("bilinear_scalar", 0.75)
    x, w, B = _limit_inputs(model, 8, 2, 0)
    with pytest.raises(DimensionMismatch):
        schemes.solve_limit_sve(model, kernel.build_kernel_table(model, 16), x, w, B, 1.0)


def test_r_tilde_zero_and_scalar():
    model = _noise_free()
    z = np.random.default_rng(0).standard_normal((10, 2, 2, 2))
    np.testing.assert_array_equal(schemes.sample_r_tilde(model, np.zeros((10, 2)), 0.5, z), 0.0)
    add = builtin_model("additive_scalar", 0.75)
    k2 = math.sqrt(constants.kappa2_sq(0.75))
    r = schemes.draw_r_tilde(add, [0.0], k2, 100_000, 3)[:, 0]
    mom = analysis.moment_summary(r)
    assert abs(mom.variance - k2**2) <= 3 * mom.se_variance


def test_r_tilde_dimension_mismatch():
    model = builtin_model("coupled_2d", 0.75)
    with pytest.raises(DimensionMismatch):
        schemes.sample_r_tilde(model, np.zeros(2), 1.0, np.zeros(5))
    with pytest.raises(DimensionMismatch):
        schemes.sample_r_tilde(model, np.zeros(3), 1.0, np.zeros(8))
