import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from naolab import _core_py, core
from naolab.errors import QuadratureError
from naolab.quadrature import GAUSS_W, KRONROD_W, NODES, adaptive_gk, gk15


def test_gauss_nodes_match_legendre():
    x, w = np.polynomial.legendre.leggauss(7)
    gauss = NODES[GAUSS_W > 0]
    assert np.allclose(np.sort(gauss), np.sort(x), atol=1e-15)
    assert np.allclose(np.sort(GAUSS_W[GAUSS_W > 0]), np.sort(w), atol=1e-15)
    assert KRONROD_W.sum() == pytest.approx(2.0, abs=1e-14)


@pytest.mark.parametrize("deg", range(0, 23))
def test_kronrod_rule_exact_for_polynomials(deg):
    res, _, _ = gk15(lambda t: t ** deg, -1.0, 1.0)
    exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
    assert res == pytest.approx(exact, abs=1e-14)


def test_adaptive_handles_breakpoints():
    f = lambda t: np.where(t < 0.3, 1.0, np.exp(-t))
    val, err = adaptive_gk(f, 0.0, 2.0, tol=1e-12, points=[0.3])
    exact = 0.3 + (math.exp(-0.3) - math.exp(-2.0))
    assert val == pytest.approx(exact, rel=1e-12)
    assert err <= 1e-10


def test_adaptive_budget_exhaustion_reports_estimate():
    with pytest.raises(QuadratureError) as info:
        adaptive_gk(lambda t: np.sin(1.0 / np.maximum(t, 1e-300)), 0.0, 1.0, tol=1e-14, limit=5)
    assert info.value.estimate is not None and info.value.error is not None


def test_backend_selected():
    assert core.BACKEND in ("cython", "python")
    assert "python" in core.backends()


def test_forced_python_backend():
    env = dict(os.environ, NAOLAB_BACKEND="python")
    out = subprocess.run([sys.executable, "-c", "import naolab.core as c; print(c.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.skipif("cython" not in core.backends(), reason="compiled core not built")
@settings(max_examples=20, deadline=None)
@given(st.integers(0, 4), st.integers(0, 1), st.integers(1, 4),
       st.lists(st.floats(-15, 15), min_size=1, max_size=5))
def test_backends_agree(family, kind, freq, xs):
    fast = core.backends()["cython"]
    eta = {0: 3.0, 1: 2.0, 2: 3.0, 3: 0.0, 4: 0.0}[family]
    support = 10.0 if family in (1, 2) else 11.0
    r = np.linspace(-1, 12, 57)
    assert np.allclose(fast.kernel_values(family, eta, support, r),
                       _core_py.kernel_values(family, eta, support, r), rtol=1e-14, atol=1e-14)
    assert np.allclose(fast.g_tokens(kind, freq, r, np.array(xs)),
                       _core_py.g_tokens(kind, freq, r, np.array(xs)), rtol=1e-14, atol=1e-14)
    a, _ = fast.radial_operator(family, eta, support, kind, freq, np.array(xs))
    b, _ = _core_py.radial_operator(family, eta, support, kind, freq, np.array(xs))
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)
