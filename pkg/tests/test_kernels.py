"""Both kernel backends must agree with each other and with plain loops."""
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from neurorrm import _pykernels, kernels

try:
    from neurorrm import _kernels
except ImportError:  # extension not built
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def _problem(rng, F=200, B=3):
    cap = rng.choice([4.7e8, 6.7e8, 5.6e8, 8.5e8, 6.5e8, 1.03e9], size=(F, B))
    pw = rng.choice([10.0, 15.85, 25.12], size=(F, B)).sum(1)
    bw = rng.choice([250e6, 500e6], size=(F, B)).sum(1)
    return cap, pw, bw


def test_backend_flag():
    forced = os.environ.get("NEURORRM_PURE_PYTHON", "") not in ("", "0")
    if forced or _kernels is None:
        assert kernels.BACKEND == "python"
    else:
        assert kernels.BACKEND == "cython"


@needs_ext
@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_best_config_backends_agree(seed):
    rng = np.random.default_rng(seed)
    cap, pw, bw = _problem(rng)
    dem = rng.uniform(0, 1.2e9, size=(5, 3))
    a = _pykernels.best_configs(cap, pw, bw, dem, 1e-6, 1e-2, 1e-10)
    b = _kernels.best_configs(cap, pw, bw, dem, 1e-6, 1e-2, 1e-10)
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])
    for i in range(5):
        assert _kernels.best_config(cap, pw, bw, dem[i], 1e-6, 1e-2, 1e-10) == (a[0][i], a[1][i])


@needs_ext
def test_tie_rule_prefers_low_power_then_bandwidth():
    cap = np.array([[1.0], [1.0], [1.0], [1.0]]) * 1e9
    pw = np.array([20.0, 10.0, 10.0, 10.0])
    bw = np.array([5e8, 5e8, 2.5e8, 2.5e8])
    # demand far above every capacity, beta1 = beta2 = 0: all four tie exactly
    for impl in (_pykernels, _kernels):
        k, s = impl.best_config(cap, pw, bw, np.array([5e9]), 1e-6, 0.0, 0.0)
        assert k == 2 and s == pytest.approx(4000.0)


@needs_ext
@given(hnp.arrays(np.float64, (3, 6), elements=st.floats(0, 1)), st.integers(1, 12),
       st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.1, 3.0))
@settings(max_examples=50, deadline=None)
def test_tem_backends_agree(x, T, au, av, th):
    a = _pykernels.tem_encode_batch(x, T, np.array([au]), np.array([av]), th)
    b = np.asarray(_kernels.tem_encode_batch(x, T, np.array([au]), np.array([av]), th))
    assert np.array_equal(a, b)


@needs_ext
@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_lif_backends_agree(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(0, 0.6, size=(12, 7))
    s = (rng.random((12, 10)) < 0.3).astype(np.uint8)
    a = _pykernels.lif_layer(w, s, 0.5, 0.75, 1.0)
    b = np.asarray(_kernels.lif_layer(w, s, 0.5, 0.75, 1.0))
    assert np.array_equal(a, b)


def lif_loop(w, s, lam_syn, lam_mem, th):
    """Scalar reference: one neuron at a time."""
    n_in, n_out = w.shape
    T = s.shape[1]
    out = np.zeros((n_out, T), dtype=np.uint8)
    for j in range(n_out):
        i_syn = u = 0.0
        prev = 0
        for t in range(T):
            i_syn = lam_syn * i_syn + sum(w[k, j] for k in range(n_in) if s[k, t])
            u = (0.0 if prev else lam_mem * u) + i_syn
            prev = int(u >= th)
            out[j, t] = prev
    return out


def test_lif_matches_scalar_loop():
    rng = np.random.default_rng(4)
    w = rng.normal(0, 0.7, size=(9, 5))
    s = (rng.random((9, 12)) < 0.4).astype(np.uint8)
    ref = lif_loop(w, s, 0.5, 0.75, 1.0)
    assert np.array_equal(np.asarray(kernels.lif_layer(w, s, 0.5, 0.75, 1.0)), ref)
    assert np.array_equal(_pykernels.lif_layer(w, s, 0.5, 0.75, 1.0), ref)
