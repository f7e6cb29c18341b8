import numpy as np
import pytest

from fsde_mle import _kernels

pytestmark = pytest.mark.skipif(_kernels.numba_kernels is None, reason="numba unavailable")


@pytest.mark.parametrize("d", [1, 2])
def test_numba_and_numpy_agree(d):
    rng = np.random.default_rng(d)
    n, p, nt, m = 40, 7, 5, 2
    rev = rng.standard_normal((n, d, d))
    F = rng.standard_normal((p, n, d))
    W = rng.standard_normal((nt, d, d))
    f = rng.standard_normal((p, d))
    G = rng.standard_normal((p, nt, d, d, m))
    c = rng.standard_normal((p, d, m))
    (nc, ns, npth), (bc, bs, bp) = _kernels.numpy_kernels, _kernels.numba_kernels
    for k in (1, 17, n):
        np.testing.assert_allclose(bc(rev, F, k), nc(rev, F, k), rtol=1e-12, atol=1e-12)
    a1, a2 = np.zeros((p, nt, d)), np.zeros((p, nt, d))
    ns(a1, W, f)
    bs(a2, W, f)
    npth(a1, G, c)
    bp(a2, G, c)
    np.testing.assert_allclose(a1, a2, rtol=1e-12, atol=1e-12)


def test_nan_propagates_through_numba_conv():
    rev = np.ones((4, 1, 1))
    F = np.ones((2, 4, 1))
    F[1, 0, 0] = np.nan
    out = _kernels.numba_kernels[0](rev, F, 3)
    assert np.isfinite(out[0, 0]) and np.isnan(out[1, 0])


def test_disable_flag_selects_numpy():
    import subprocess
    import sys

    code = "from fsde_mle import _kernels; print(_kernels.BACKEND)"
    res = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"FSDE_MLE_DISABLE_NUMBA": "1", "PATH": ""})
    assert res.stdout.strip() == "numpy"
