import numpy as np
import pytest

from fsde_mle.errors import InvalidParams, UnknownModel
from fsde_mle.models import MODEL_NAMES, ModelSpec, builtin_model, is_negative_definite, validate


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_builtin_models_validate(name):
    rep = validate(builtin_model(name, 0.75))
    assert rep.valid, rep.violations
    assert rep.notes


def test_additive_scalar():
    m = builtin_model("additive_scalar", 0.75)
    assert (m.d, m.m) == (1, 1)
    x = np.array([[0.3], [-2.0]])
    np.testing.assert_array_equal(m.diffusion(x), np.ones((2, 1, 1)))
    np.testing.assert_array_equal(m.drift_jacobian(x), 0.0)
    np.testing.assert_array_equal(m.diffusion_jacobian(x), 0.0)
    rep = validate(m)
    assert rep.lipschitz_diffusion == 0.0 and rep.lipschitz_drift == 0.0


def test_bilinear_scalar():
    m = builtin_model("bilinear_scalar", 0.6)
    assert m.drift_jacobian(np.zeros(1))[0, 0] == 0.5
    assert m.x0[0] == 1.0
    rep = validate(m)
    assert rep.lipschitz_drift == pytest.approx(0.5, abs=0.01)
    assert rep.lipschitz_diffusion == pytest.approx(0.5, abs=0.01)


def test_coupled_2d():
    m = builtin_model("coupled_2d", 0.75)
    assert (m.d, m.m) == (2, 2)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(m.A)), [-3.0, -1.0])
    assert is_negative_definite(m.A)
    s = m.diffusion(np.array([0.0, np.pi]))
    np.testing.assert_allclose(s, np.diag([1.5, 0.5]), atol=1e-15)
    assert m.diffusion_jacobian(np.zeros(2)).shape == (2, 2, 2)


def test_unknown_model():
    with pytest.raises(UnknownModel):
        builtin_model("nope", 0.75)


def test_not_negative_definite_is_reported():
    m = builtin_model("additive_scalar", 0.75)
    bad = ModelSpec(0.75, [[1.0]], m.drift, m.diffusion, m.drift_jacobian,
                    m.diffusion_jacobian, m.x0)
    rep = validate(bad)
    assert not rep.valid
    assert any("negative definite" in v for v in rep.violations)


def test_wrong_jacobian_is_reported():
    m = builtin_model("bilinear_scalar", 0.75)
    bad = ModelSpec(0.75, m.A, m.drift, m.diffusion, lambda x: 2 * m.drift_jacobian(x),
                    m.diffusion_jacobian, m.x0)
    rep = validate(bad)
    assert not rep.valid and "drift jacobian" in rep.violations[0]


def test_validate_never_raises_on_broken_coefficient():
    m = builtin_model("bilinear_scalar", 0.75)

    def boom(x):
        raise RuntimeError("broken")

    bad = ModelSpec(0.75, m.A, m.drift, m.diffusion, boom, m.diffusion_jacobian, m.x0)
    rep = validate(bad, pairs=10)
    assert not rep.valid


@pytest.mark.parametrize("alpha", [0.5, 1.0, 0.3])
def test_alpha_range(alpha):
    with pytest.raises(InvalidParams):
        builtin_model("bilinear_scalar", alpha)


def test_immutable_fields():
    m = builtin_model("coupled_2d", 0.75)
    with pytest.raises(ValueError):
        m.A[0, 0] = 1.0
    assert m.with_alpha(0.6).alpha == 0.6
