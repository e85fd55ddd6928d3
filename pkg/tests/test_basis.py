import math
import warnings

import numpy as np
import pytest
from scipy.interpolate import BSpline

from remkit.basis import (BSplineSmooth, ThinPlateSmooth, TimeVaryingBasis, bspline_basis,
                          difference_penalty, quantile_knots, thinplate_basis, thinplate_penalty)


def cox_de_boor(i, p, t, x):
    """Scalar recursion with the 0/0 = 0 convention; the last span is closed."""
    if p == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        last = len(t) - 1
        while last > 0 and t[last - 1] == t[last]:
            last -= 1
        # x equal to the right end belongs to the final non-empty span
        return 1.0 if x == t[-1] and i + 1 == last else 0.0
    a = 0.0 if t[i + p] == t[i] else (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(i, p - 1, t, x)
    b = 0.0 if t[i + p + 1] == t[i + 1] else \
        (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(i + 1, p - 1, t, x)
    return a + b


def knots_for(seed, degree, n_inner):
    rng = np.random.default_rng(seed)
    inner = np.sort(rng.uniform(0, 10, n_inner))
    return np.r_[np.zeros(degree + 1), inner, np.full(degree + 1, 10.0)]


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_matches_recursion_oracle(degree):
    t = knots_for(degree, degree, 6)
    x = np.random.default_rng(10 + degree).uniform(0, 10, 1000)
    x[:3] = [0.0, 10.0, t[degree + 2]]
    B = bspline_basis(x, t, degree)
    nb = len(t) - degree - 1
    ref = np.array([[cox_de_boor(i, degree, t, xx) for i in range(nb)] for xx in x])
    assert np.max(np.abs(B - ref)) < 1e-12
    assert np.max(np.abs(B.sum(axis=1) - 1.0)) < 1e-12
    assert np.all((B != 0).sum(axis=1) <= degree + 1)


def test_matches_scipy_design_matrix():
    t = knots_for(0, 3, 8)
    x = np.linspace(0, 10, 333)
    ref = BSpline.design_matrix(x, t, 3).toarray()
    assert np.max(np.abs(bspline_basis(x, t, 3) - ref)) < 1e-12


def test_degree_zero_step():
    assert list(bspline_basis([0.5], [0.0, 1.0, 2.0], 0)[0]) == [1.0, 0.0]


def test_uniform_cubic_at_knot():
    t = np.arange(-3.0, 8.0)  # spacing 1
    B = bspline_basis([2.0], t, 3)[0]
    nz = B[B > 0]
    np.testing.assert_allclose(nz, [1 / 6, 4 / 6, 1 / 6], atol=1e-15)


def test_clamping_counts_and_warns():
    t = np.r_[np.zeros(4), 5.0, np.full(4, 10.0)]
    with pytest.warns(UserWarning, match="2 points clamped"):
        B = bspline_basis([-1.0, 5.0, 11.0], t, 3)
    np.testing.assert_allclose(B[0], bspline_basis([0.0], t, 3)[0])
    _, n = bspline_basis([-1.0, 11.0], t, 3, return_clamped=True)
    assert n == 2


def test_thinplate_values():
    d = np.array([0.0, 1.0, 3.0])
    b = thinplate_basis([0.0], d)[0]
    assert b[0] == 0.0 and b[1] == 0.0
    assert thinplate_basis([math.e], [0.0])[0, 0] == pytest.approx(math.e ** 2, rel=1e-15)


def test_thinplate_penalty_psd_null_two():
    S = thinplate_penalty(np.linspace(0, 1, 8))
    w = np.linalg.eigvalsh(S)
    assert w.min() > -1e-10
    assert int(np.sum(np.abs(w) < 1e-10 * w.max())) == 2


def test_difference_penalty_null_space():
    S = difference_penalty(7)
    assert np.allclose(S @ np.ones(7), 0) and np.allclose(S @ np.arange(7.0), 0)
    assert np.linalg.matrix_rank(S) == 5


def test_bspline_smooth_constraint_and_null():
    x = np.random.default_rng(0).gamma(2.0, 1.0, 500)
    sm = BSplineSmooth(8).fit(x)
    X = sm.transform(x)
    assert X.shape == (500, 7)
    assert np.allclose(X.mean(axis=0), 0, atol=1e-12)
    w = np.linalg.eigvalsh(sm.penalty)
    assert int(np.sum(w < 1e-10 * w.max())) == sm.null_dim == 1
    # the unpenalized direction has B-spline coefficients linear in the index
    c = sm.Z @ np.linalg.eigh(sm.penalty)[1][:, 0]
    A = np.column_stack([np.ones(8), np.arange(8.0)])
    resid = c - A @ np.linalg.lstsq(A, c, rcond=None)[0]
    assert np.max(np.abs(resid)) < 1e-10


def test_small_k_lowers_degree():
    sm = BSplineSmooth(3).fit(np.linspace(0, 1, 50))
    assert sm.degree == 2


def test_quantile_knots_layout():
    t = quantile_knots(np.arange(101.0), 10, 3)
    assert len(t) == 14 and t[0] == 0 and t[-1] == 100
    assert np.all(np.diff(t) >= 0)


def test_thin_plate_smooth_centering():
    x = np.random.default_rng(1).uniform(-2, 5, 300)
    sm = ThinPlateSmooth(6).fit(x)
    assert np.allclose(sm.transform(x).mean(axis=0), 0, atol=1e-12)


def test_time_varying_columns():
    tv = TimeVaryingBasis(5, (0.0, 10.0))
    x = np.array([2.0, -1.0])
    t = np.array([0.0, 10.0])
    C = tv.transform(x, t)
    np.testing.assert_allclose(C, x[:, None] * thinplate_basis([0.0, 1.0], tv.delta))
    assert tv.null_dim == 2
