import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drlpdid import kernels

pytestmark = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba unavailable")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 30), st.integers(3, 10), st.integers(-2, 3),
       st.integers(1, 2))
def test_stack_rows_parity(seed, N, T, h, k):
    rng = np.random.default_rng(seed)
    ft = rng.integers(0, T + 1, N).astype(np.int64)
    Y = rng.normal(size=(N, T))
    lo, hi = 1 + k - min(h, 0), T - max(h, 0)
    dates = np.unique(ft[(ft >= lo) & (ft <= hi)])
    lags = np.arange(k, 0, -1, dtype=np.int64)
    w = np.full(k, 1.0 / k)
    a = kernels.stack_rows_numba(ft, Y, dates, h, lags, w)
    b = kernels.stack_rows_numpy(ft, Y, dates, h, lags, w)
    for x, y in zip(a, b):
        assert x.dtype == y.dtype
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 200), st.integers(1, 5), st.integers(1, 20))
def test_cluster_sums_parity(seed, n, p, C):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, p))
    codes = rng.integers(0, C, n).astype(np.int64)
    np.testing.assert_allclose(kernels.cluster_sums_numba(v, codes, C),
                               kernels.cluster_sums_numpy(v, codes, C), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 50), st.integers(2, 60), st.integers(1, 6))
def test_sup_t_parity(seed, B, C, H):
    rng = np.random.default_rng(seed)
    xi = rng.choice([-1.0, 1.0], size=(B, C))
    infl = rng.normal(size=(C, H))
    inv = rng.uniform(0.5, 2, H)
    np.testing.assert_allclose(kernels.sup_t_numba(xi, infl, inv),
                               kernels.sup_t_numpy(xi, infl, inv), rtol=1e-12, atol=1e-12)


def test_env_flag_selects_numpy_path_with_same_results():
    code = ("import json; from drlpdid import kernels, estimate, build_stack, McDesign, simulate;"
            "rep = simulate(McDesign(), 0); s = build_stack(rep.panel, 2);"
            "e = estimate(s, 'dr');"
            "print(json.dumps([kernels.USE_NUMBA, e.theta, e.se]))")
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, DRLPDID_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        out[flag] = json.loads(res.stdout)
    assert out["0"][0] is True and out["1"][0] is False
    assert out["0"][1] == pytest.approx(out["1"][1], abs=1e-12)
    assert out["0"][2] == pytest.approx(out["1"][2], rel=1e-10)
