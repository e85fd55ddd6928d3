import math
import warnings

import numpy as np
import pytest
from scipy.stats import kstwobign

from remkit.diagnostics import (aic, gof_process, gof_test_linear, gof_test_omitted,
                                gof_test_smooth, kolmogorov_sf, simulate_bridge)
from remkit.errors import InputError, RegimeMismatchError
from remkit.events import build_risk_set
from remkit.pipeline import design_for, fit_sequence
from remkit.likelihood import evaluate

from conftest import ACT, REC, REP


@pytest.mark.parametrize("t", [0.2, 0.5, 0.59, 0.6, 0.9, 1.36, 2.0, 3.5])
def test_kolmogorov_matches_scipy(t):
    assert kolmogorov_sf(t) == pytest.approx(kstwobign.sf(t), abs=1e-12)


def test_kolmogorov_limits():
    assert kolmogorov_sf(0.0) == 1.0
    assert kolmogorov_sf(1e-3) == pytest.approx(1.0)
    assert kolmogorov_sf(10.0) < 1e-80


def test_bridge_marginal_variance():
    B, n = 100_000, 20
    out = simulate_bridge(1, n, 5, B, return_path=True)
    mid = out["paths"][:, n // 2 - 1, 0]
    # Var W(1/2) = 1/4; Var of the sample variance is 2 sigma^4 / (B - 1)
    sd = math.sqrt(2 * 0.25 ** 2 / (B - 1))
    assert abs(mid.var() - 0.25) < 3 * sd
    np.testing.assert_allclose(out["paths"][:, -1, :], 0.0, atol=1e-12)


def test_bridge_seed_reproducible_and_chunk_invariant():
    a = simulate_bridge(2, 50, 9, 300)["sup_sq"]
    b = simulate_bridge(2, 50, 9, 300, chunk_elems=1000)["sup_sq"]
    c = simulate_bridge(2, 50, 9, 300)["sup_sq"]
    np.testing.assert_array_equal(a, c)
    assert a.shape == b.shape == (300,)


def test_bridge_sup_matches_kolmogorov_roughly():
    sup = simulate_bridge(1, 2000, 1, 20_000)["sup_abs"]
    # discretisation biases the sup downward slightly
    assert np.mean(sup > 1.36) == pytest.approx(kolmogorov_sf(1.36), abs=0.01)


def test_bad_B_rejected(rec_seq):
    res, mm = fit_sequence(rec_seq, [REC, ACT], "rec + s(act, k=6)", "cox", nu={"s(act)": 1.0})
    for B in (None, 0):
        with pytest.raises(InputError):
            gof_test_smooth(res, mm, "s(act)", B=B)
    with pytest.raises(InputError):
        simulate_bridge(1, 10, 0, 0)


def test_process_ends_at_penalized_score(rec_seq):
    res, mm = fit_sequence(rec_seq, [REC, ACT], "rec + s(act, k=6)", "cox", nu={"s(act)": 5.0})
    G = gof_process(res, mm)
    np.testing.assert_allclose(G[-1], 0.0, atol=1e-6)
    U = gof_process(res, mm, center=False)
    _, g, _ = evaluate(mm, res.theta)
    np.testing.assert_allclose(U[-1], g, atol=1e-8)


def test_linear_and_smooth_tests_run(rec_seq):
    res, mm = fit_sequence(rec_seq, [REC, ACT], "rec + s(act, k=6)", "cox", nu={"s(act)": 1.0})
    lin = gof_test_linear(res, mm, "rec")
    assert 0 <= lin.p_value <= 1 and lin.process.shape == (mm.n_units,)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sm = gof_test_smooth(res, mm, "s(act)", B=200, seed=1)
    assert 0 <= sm.p_value <= 1 and sm.B == 200
    assert set(sm.to_dict()) >= {"statistic", "p_value", "method", "B"}
    with pytest.raises(InputError):
        gof_test_linear(res, mm, "s(act)")


def test_regime_mismatch(rec_seq):
    res, _ = fit_sequence(rec_seq, [REC], "rec", "cox")
    mm_other, _, _ = design_for(rec_seq, build_risk_set(rec_seq), [REC], "rec", "poisson")
    with pytest.raises(RegimeMismatchError):
        gof_test_linear(res, mm_other, "rec")


def test_omitted_term_detected(rec_seq):
    res, _ = fit_sequence(rec_seq, [REC, REP], "rep", "cox")
    mm_ext, _, _ = design_for(rec_seq, build_risk_set(rec_seq), [REC, REP], "rep + rec", "cox")
    out = gof_test_omitted(res, mm_ext, "rec", B=1000, seed=0)
    assert out.p_value < 0.05


def test_aic_counts_edf(rec_seq):
    res, _ = fit_sequence(rec_seq, [REC], "rec", "cox")
    assert aic(res) == pytest.approx(-2 * res.loglik + 2)
