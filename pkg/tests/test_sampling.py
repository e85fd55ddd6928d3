import io
from datetime import datetime

import numpy as np
import pytest
from scipy import stats as sps

from remkit.errors import SamplingError
from remkit.events import EventSequence, build_risk_set
from remkit.sampling import ShiftTable, build_case_control, draw_shifts, sample_controls
from remkit.stats import StatisticSpec

from conftest import REC, REP

MONDAY = datetime(2024, 1, 1)
WEEKDAY = StatisticSpec("wd", "exogenous_global", params={"transform": "weekday"})


def actors37():
    n = 37
    seq = EventSequence([1.0, 2.0], [0, 1], [1, 0], [f"v{i:02d}" for i in range(n)])
    return seq, build_risk_set(seq)


def test_control_uniformity_chi_square():
    seq, rst = actors37()
    rng = np.random.default_rng(2024)
    counts = np.zeros((37, 37))
    for _ in range(100_000):
        cs, cr = rst.sample(1.0, 1, (0, 1), rng)
        counts[cs[0], cr[0]] += 1
    mask = rst.static_mask.copy()
    mask[0, 1] = False
    obs = counts[mask]
    assert len(obs) == 1331 and counts[~mask].sum() == 0
    p = sps.chisquare(obs).pvalue
    assert p > 0.001


def test_exhaustive_controls(toy, toy_rst):
    out = sample_controls(toy_rst, toy, 5, np.random.default_rng(0))
    for srs in out:
        got = {tuple(c) for c in srs.controls.tolist()}
        want = {(a, b) for a in range(3) for b in range(3) if a != b} - {srs.case}
        assert got == want


def test_single_dyad_risk_set_refused():
    seq = EventSequence([1.0], [0], [1], ["a", "b"])
    from remkit.events import RiskPolicy
    rst = build_risk_set(seq, RiskPolicy("exclusion", exclusions={("b", "a")}))
    with pytest.raises(SamplingError, match="full likelihood"):
        sample_controls(rst, seq, 1, 0)


def test_sampling_reproducible(toy, toy_rst):
    a = sample_controls(toy_rst, toy, 2, 7)
    b = sample_controls(toy_rst, toy, 2, 7)
    assert all(np.array_equal(x.controls, y.controls) for x, y in zip(a, b))


def test_zero_shifts():
    sh = draw_shifts((3, 3), "zero", T=10.0)
    assert not np.any(sh.tau) and sh.horizon == 10.0 and sh.degenerate


def test_uniform_shifts_bounds():
    sh = draw_shifts((20, 20), "uniform", rng=1, T=50.0)
    assert sh.tau.min() > 0 and sh.tau.max() < 5.0
    assert sh.horizon == pytest.approx(50.0 + sh.tau.max())
    with pytest.raises(SamplingError):
        draw_shifts((2, 2), "uniform")


def test_degenerate_shift_matches_unshifted(rec_seq):
    rst = build_risk_set(rec_seq)
    a = build_case_control(rec_seq, rst, [REC, REP], 2, None, 5)
    b = build_case_control(rec_seq, rst, [REC, REP], 2, draw_shifts((10, 10), "zero"), 5)
    for f in ("event_index", "case_s", "case_r", "case_t", "ctrl_s", "ctrl_r", "ctrl_t"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    for n in ("rec", "rep"):
        assert np.array_equal(a.delta(n), b.delta(n))


def test_global_covariate_cancels_without_shift():
    seq = EventSequence([0.5, 3.2, 5.5, 8.1], [0, 1, 2, 0], [1, 2, 0, 2], ["a", "b", "c"],
                        calendar_origin=MONDAY)
    data = build_case_control(seq, build_risk_set(seq), [WEEKDAY], 1, None, 0)
    assert not np.any(data.delta("wd"))


def test_shifted_weekday_difference():
    seq = EventSequence([0.2, 7.5], [1, 0], [0, 1], ["a", "b"], calendar_origin=MONDAY)
    tau = np.array([[0.0, 0.1], [2.1, 0.0]])
    shifts = ShiftTable(tau, 7.5 + 2.1)
    data = build_case_control(seq, build_risk_set(seq), [WEEKDAY], 1, shifts, 0)
    row = data[1]
    assert row.case == (0, 1) and row.control == (1, 0)
    assert row.control_time == pytest.approx(5.5)          # a Saturday
    assert row.case_values["wd"] == 1.0 and row.control_values["wd"] == 0.0
    assert row.delta["wd"] == 1.0


def test_shifted_controls_use_original_clock(rec_seq):
    rst = build_risk_set(rec_seq)
    T = rec_seq.time_window[1] - rec_seq.time_window[0]
    sh = draw_shifts((10, 10), "uniform", rng=3, T=T)
    data = build_case_control(rec_seq, rst, [REC], 1, sh, 3)
    t_shift = data.case_t + sh.tau[data.case_s, data.case_r]
    np.testing.assert_allclose(data.ctrl_t, t_shift - sh.tau[data.ctrl_s, data.ctrl_r], atol=1e-12)
    lo, hi = rec_seq.time_window
    assert np.all((data.ctrl_t >= lo) & (data.ctrl_t <= hi))


def test_case_control_csv_layout(toy, toy_rst):
    data = build_case_control(toy, toy_rst, [REC], 1, None, 0)
    buf = io.StringIO()
    data.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "time,sender_ev,receiver_ev,sender_nv,receiver_nv,rec_ev,rec_nv,rec_delta,y"
    assert len(lines) == 1 + len(toy)
