import numpy as np
import pytest

from remkit import kernels

pytestmark = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                                reason="compiled kernels not built")


def _work(seed, n_events=300, n=8):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, n, n_events)
    r = (s + rng.integers(1, n, n_events)) % n
    t = np.sort(rng.uniform(0, 50, n_events))
    t[10:14] = t[10]  # ties
    w = rng.uniform(0.5, 2.0, n_events)
    q_t = np.sort(rng.uniform(0, 55, 400))
    q_s = rng.integers(0, n, 400)
    q_r = (q_s + rng.integers(1, n, 400)) % n
    mech, block = np.meshgrid(np.arange(7), np.arange(4))
    mech, block = mech.ravel(), block.ravel()
    ok = ~((block == 2) & (mech >= 4))  # no decay form for closure / last receiver
    mech, block = mech[ok], block[ok]
    hl = np.where(block == 2, 0, -1)
    return (s, r, t, w, n, n, q_s, q_r, q_t, mech, block, hl, (3.0,), 2.0, True)


def _both(fn, *args):
    prev = kernels.use_backend("python")
    try:
        a = fn(*args)
        kernels.use_backend("compiled")
        b = fn(*args)
    finally:
        kernels.use_backend(prev)
    return a, b


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sweep_backends_agree(seed):
    a, b = _both(kernels.sweep, *_work(seed))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_grouped_loglik_backends_agree():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(600, 5))
    offsets = np.arange(0, 601, 20)
    case_rows = offsets[:-1] + rng.integers(0, 20, 30)
    theta = rng.normal(size=5)
    a, b = _both(kernels.grouped_loglik, X, offsets, case_rows, theta)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-12)
    a, b = _both(kernels.grouped_expectation, X, offsets, theta)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_closure_mechanisms_need_closure_flag():
    args = list(_work(0))
    args[-1] = False
    with pytest.raises(ValueError, match="closure"):
        kernels.sweep(*args)


def test_unsorted_queries_rejected():
    args = list(_work(0))
    args[8] = args[8][::-1].copy()
    with pytest.raises(ValueError, match="sorted"):
        kernels.sweep(*args)
