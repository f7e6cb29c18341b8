import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given
from hypothesis import strategies as st

from fsde_mle import mlf
from fsde_mle.errors import DimensionMismatch, InvalidParams, NonConvergent
from fsde_mle.mlf import MlParams, ml_array, ml_matrix, ml_matrix_scaled, ml_scalar

from . import oracles


def test_gamma_matches_scipy_on_positive_range():
    x = np.linspace(0.01, 20.0, 2001)
    np.testing.assert_allclose(mlf.gamma(x), scipy.special.gamma(x), rtol=1e-13)


def test_rgamma_negative_arguments_use_reflection():
    x = np.array([-0.25, -0.4, -1.5, -2.75])
    np.testing.assert_allclose(mlf.rgamma(x), scipy.special.rgamma(x), rtol=1e-13)
    assert mlf.rgamma(-3.0) == 0.0
    assert mlf.rgamma(0.0) == 0.0


def test_exp_reduction():
    p = MlParams(1.0, 1.0)
    for z in np.linspace(-5, 5, 41):
        assert abs(ml_scalar(p, z) - math.exp(z)) <= 1e-12 * math.exp(z)


def test_at_zero_is_reciprocal_gamma():
    for a, b in [(0.75, 0.75), (0.6, 1.0), (0.9, 0.3), (1.0, 2.5)]:
        assert ml_scalar(MlParams(a, b), 0.0) == pytest.approx(1 / math.gamma(b), rel=1e-14)


def test_golden_value_against_multiprecision_series():
    v = ml_scalar(MlParams(0.75, 0.75), -1.0)
    assert v == pytest.approx(oracles.ml_series(0.75, 0.75, -1), rel=1e-12)


def test_real_argument_gives_real_result_and_complex_agrees():
    p = MlParams(0.8, 0.9)
    r = ml_scalar(p, -2.0)
    assert isinstance(r, float)
    c = ml_scalar(p, -2.0 + 0j)
    assert c.imag == 0.0 or abs(c.imag) < 1e-15
    z = 0.5 - 1.2j
    assert ml_scalar(p, z) == pytest.approx(oracles.ml_series(0.8, 0.9, z), rel=1e-12)


@given(a=st.floats(0.5, 1.0), b=st.floats(0.1, 2.0), x=st.floats(-8.0, 3.0))
def test_scalar_matches_oracle_property(a, b, x):
    v = ml_scalar(MlParams(a, b), x)
    ref = oracles.ml_series(a, b, x)
    assert abs(v - ref) <= 1e-10 * max(abs(ref), 1e-3)


def test_invalid_params():
    with pytest.raises(InvalidParams):
        MlParams(0.0, 1.0)
    with pytest.raises(InvalidParams):
        MlParams(1.2, 1.0)
    with pytest.raises(InvalidParams):
        MlParams(0.5, 1.0, tol=0.0)
    with pytest.raises(InvalidParams):
        MlParams(0.5, 1.0, max_terms=0)


def test_non_convergent_when_term_cap_is_tiny():
    with pytest.raises(NonConvergent):
        ml_scalar(MlParams(0.75, 1.0, max_terms=3), -2.0)


@pytest.mark.parametrize("a", [0.6, 0.75, 0.9])
@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_derivative_identity_by_finite_differences(a, lam):
    step = 1e-5
    for eta in (0.0, 1.0 - a, 0.5, 1.0):
        b = a + eta

        def f(t):
            return t ** (b - 1) * ml_scalar(MlParams(a, b), -lam * t**a)

        for t in (0.3, 0.7, 1.0):
            fd = (f(t + step) - f(t - step)) / (2 * step)
            if abs(b - 1.0) < 1e-15:
                exact = -lam * t ** (a - 1) * ml_scalar(MlParams(a, a), -lam * t**a)
            else:
                exact = t ** (b - 2) * ml_scalar(MlParams(a, b - 1), -lam * t**a)
            assert abs(fd - exact) <= 1e-6 * abs(exact), (eta, t)


@pytest.mark.parametrize("b", [0.75, 1.0])
def test_decay_bound_on_negative_axis(b):
    p = MlParams(0.75, b, max_terms=5000)
    coarse = np.linspace(0, 100, 11)
    C = 1.1 * max(abs(ml_scalar(p, -x)) * (1 + x) for x in coarse)
    dense = np.linspace(0, 100, 101)
    assert max(abs(ml_scalar(p, -x)) * (1 + x) for x in dense) <= C


def test_array_matches_scalar():
    p = MlParams(0.75, 0.75)
    z = np.linspace(-3, 1, 17).reshape(17, 1)
    np.testing.assert_allclose(ml_array(p, z)[:, 0], [ml_scalar(p, v) for v in z[:, 0]],
                               rtol=1e-13)


def test_matrix_identity_and_diagonal():
    np.testing.assert_allclose(ml_matrix(MlParams(1, 1), np.zeros((2, 2))), np.eye(2), atol=1e-15)
    p = MlParams(0.75, 0.75)
    out = ml_matrix(p, np.diag([-1.0, -2.0]))
    np.testing.assert_allclose(np.diag(out), [ml_scalar(p, -1.0), ml_scalar(p, -2.0)], rtol=1e-13)
    assert out[0, 1] == 0.0 and out[1, 0] == 0.0


def test_matrix_symmetric_vs_eigendecomposition():
    p = MlParams(0.75, 1.0)
    M = np.array([[-2.0, 1.0], [1.0, -2.0]])
    lam, Q = np.linalg.eigh(M)
    ref = Q @ np.diag([oracles.ml_series(0.75, 1.0, v) for v in lam]) @ Q.T
    np.testing.assert_allclose(ml_matrix(p, M), ref, atol=1e-10)
    # the general series path must agree as well
    series = mlf._matrix_series(p, M, np.ones(1), 2)[0]
    np.testing.assert_allclose(series, ref, atol=1e-10)


@given(st.integers(1, 4), st.integers(0, 2**31))
def test_matrix_series_equals_eigen_path_property(d, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    M = -(B @ B.T) / d - 0.1 * np.eye(d)
    p = MlParams(0.8, 0.8)
    eig = ml_matrix(p, M)
    series = mlf._matrix_series(p, M, np.ones(1), d)[0]
    np.testing.assert_allclose(series, eig, atol=1e-10)
    # commutes with M
    np.testing.assert_allclose(eig @ M, M @ eig, atol=1e-10)


def test_nonsymmetric_matrix_commutes():
    p = MlParams(0.7, 0.7)
    M = np.array([[-1.0, 0.5], [0.0, -2.0]])
    E = ml_matrix(p, M)
    np.testing.assert_allclose(E @ M, M @ E, atol=1e-12)
    # upper-triangular: diagonal holds the scalar values
    np.testing.assert_allclose(np.diag(E), [ml_scalar(p, -1.0), ml_scalar(p, -2.0)], rtol=1e-12)


def test_scaled_matches_loop():
    p = MlParams(0.75, 0.75)
    M = np.array([[-2.0, 1.0], [1.0, -2.0]])
    s = np.array([0.1, 0.5, 1.0])
    out = ml_matrix_scaled(p, M, s)
    for k, v in enumerate(s):
        np.testing.assert_allclose(out[k], ml_matrix(p, v * M), atol=1e-14)


def test_matrix_shape_errors():
    with pytest.raises(DimensionMismatch):
        ml_matrix(MlParams(0.75, 0.75), np.zeros((2, 3)))
