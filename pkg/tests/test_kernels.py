import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogfactor._kernels import numba_kernels, numpy_kernels

needs_numba = pytest.mark.skipif(numba_kernels is None, reason="numba not installed")


@needs_numba
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 12), st.integers(0, 2**32 - 1), st.floats(0.1, 50.0))
def test_softmax_xent_agree(n, k, seed, scale):
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((n, k)) * scale
    y = rng.integers(0, k, n)
    la, ga = numpy_kernels.softmax_xent(S, y)
    lb, gb = numba_kernels.softmax_xent(S, y)
    assert la == pytest.approx(lb, rel=1e-12, abs=1e-12)
    np.testing.assert_allclose(ga, gb, rtol=1e-10, atol=1e-15)
    np.testing.assert_allclose(numpy_kernels.softmax_rows(S), numba_kernels.softmax_rows(S), rtol=1e-10, atol=1e-300)


@needs_numba
def test_softmax_extreme_scores():
    S = np.array([[1e300, 0.0, -1e300], [-800.0, -800.0, -800.0]])
    for k in (numpy_kernels, numba_kernels):
        P = k.softmax_rows(S)
        assert np.all(np.isfinite(P))
        np.testing.assert_allclose(P.sum(1), 1.0, rtol=1e-15)


@needs_numba
def test_adam_agree():
    rng = np.random.default_rng(0)
    out = []
    for k in (numpy_kernels, numba_kernels):
        p, m, v = rng.standard_normal((7, 5)), np.zeros((7, 5)), np.zeros((7, 5))
        r = np.random.default_rng(1)
        for t in range(1, 20):
            k.adam_update(p, r.standard_normal((7, 5)), m, v, 1e-2, 0.9, 0.999, 1e-8, 1 - 0.9**t, 1 - 0.999**t)
        out.append((p, m, v))
        rng = np.random.default_rng(0)
    for a, b in zip(*out):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


@needs_numba
def test_adam_rejects_non_contiguous():
    p = np.zeros((4, 4))[:, ::2]
    with pytest.raises(ValueError):
        numba_kernels.adam_update(p, np.ones((4, 2)), np.zeros((4, 2)), np.zeros((4, 2)),
                                  1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_backend_flag(backend):
    env = dict(os.environ, COGFACTOR_BACKEND=backend)
    code = "from cogfactor._kernels import BACKEND; print(BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == (backend if numba_kernels is not None else "numpy")


def test_backend_flag_invalid():
    env = dict(os.environ, COGFACTOR_BACKEND="fortran")
    out = subprocess.run([sys.executable, "-c", "import cogfactor._kernels"], env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "COGFACTOR_BACKEND" in out.stderr
