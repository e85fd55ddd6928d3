import itertools
import math

import numpy as np
import pytest

from remkit.design import (build_model_matrix, full_risk_observations, poisson_observations,
                           sampled_observations)
from remkit.events import EventSequence, build_risk_set
from remkit.formula import parse_formula
from remkit.likelihood import (evaluate, loglik_case_control, loglik_partial, unit_logliks,
                               unit_scores)
from remkit.sampling import SampledRiskSet, build_case_control, sample_controls

from conftest import ACT, REC, REP, REC_VOL, toy_sequence

SPECS = [REC, REP, ACT]
FORMULA = "rec + rep + act"


def layouts(seq, rst, seed=0):
    f = parse_formula(FORMULA)
    out = {
        "poisson": build_model_matrix(f, poisson_observations(seq, rst, SPECS)),
        "partial": build_model_matrix(f, full_risk_observations(seq, rst, SPECS)),
        "sampled": build_model_matrix(f, sampled_observations(
            seq, sample_controls(rst, seq, 3, seed), SPECS)),
        "case_control": build_model_matrix(f, build_case_control(seq, rst, SPECS, 1, None, seed)),
    }
    return out


# ------------------------------------------------------------ brute force oracle

def brute_stats(seq, s, r, t):
    prior = [(seq.senders[i], seq.receivers[i]) for i in range(len(seq)) if seq.times[i] < t]
    rec = 1.0 if (r, s) in prior else 0.0
    rep = 1.0 if (s, r) in prior else 0.0
    act = float(sum(1 for a, _ in prior if a == s))
    return [rec, rep, act]


def brute_partial(seq, theta, controls=None):
    """log L and its gradient by enumerating every risk set in plain Python."""
    nodes = range(len(seq.sender_nodes))
    value, grad = 0.0, [0.0] * len(theta)
    for i in range(len(seq)):
        s, r, t = int(seq.senders[i]), int(seq.receivers[i]), seq.times[i]
        dyads = [(a, b) for a, b in itertools.product(nodes, nodes) if a != b] \
            if controls is None else [(s, r)] + controls[i]
        xs = [brute_stats(seq, a, b, t) for a, b in dyads]
        etas = [sum(th * x for th, x in zip(theta, xv)) for xv in xs]
        m = max(etas)
        z = sum(math.exp(e - m) for e in etas)
        xc = brute_stats(seq, s, r, t)
        value += sum(th * x for th, x in zip(theta, xc)) - (m + math.log(z))
        for j in range(len(theta)):
            mean = sum(math.exp(e - m) * xv[j] for e, xv in zip(etas, xs)) / z
            grad[j] += xc[j] - mean
    return value, np.array(grad)


def test_partial_and_exhaustive_sampled_match_enumeration():
    seq = toy_sequence()
    rst = build_risk_set(seq)
    f = parse_formula(FORMULA)
    full = build_model_matrix(f, full_risk_observations(seq, rst, SPECS))
    samp = build_model_matrix(f, sampled_observations(seq, sample_controls(rst, seq, 5, 4), SPECS))
    rng = np.random.default_rng(0)
    for _ in range(5):
        theta = rng.normal(size=3)
        v_ref, g_ref = brute_partial(seq, theta)
        for mm in (full, samp):
            v, g, _ = evaluate(mm, theta)
            assert abs(v - v_ref) < 1e-10
            assert np.max(np.abs(g - g_ref)) < 1e-10


def test_case_control_equals_two_alternative_sampled():
    seq = toy_sequence()
    rst = build_risk_set(seq)
    f = parse_formula(FORMULA)
    cc = build_case_control(seq, rst, SPECS, 1, None, 9)
    sampled = [SampledRiskSet(int(cc.event_index[k]), (int(cc.case_s[k]), int(cc.case_r[k])),
                              np.array([[cc.ctrl_s[k], cc.ctrl_r[k]]])) for k in range(len(cc))]
    mm_cc = build_model_matrix(f, cc)
    mm_s = build_model_matrix(f, sampled_observations(seq, sampled, SPECS))
    rng = np.random.default_rng(1)
    for _ in range(5):
        theta = rng.normal(size=3)
        a, ga, ha = evaluate(mm_cc, theta)
        b, gb, hb = evaluate(mm_s, theta)
        assert abs(a - b) < 1e-12
        assert np.max(np.abs(ga - gb)) < 1e-12
        assert np.max(np.abs(ha - hb)) < 1e-12
        ctrl = {i: [(int(cc.ctrl_s[i]), int(cc.ctrl_r[i]))] for i in range(len(cc))}
        v_ref, g_ref = brute_partial(seq, theta, ctrl)
        assert abs(a - v_ref) < 1e-10 and np.max(np.abs(ga - g_ref)) < 1e-10


# ------------------------------------------------------------ derivatives

def central_diff(fun, theta, h):
    g = np.zeros_like(theta)
    for j in range(len(theta)):
        e = np.zeros_like(theta)
        e[j] = h
        g[j] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return g


@pytest.mark.parametrize("kind", ["poisson", "partial", "sampled", "case_control"])
def test_gradient_and_hessian_by_finite_differences(kind, rec_seq):
    seq = rec_seq.subset(np.arange(150))
    mm = layouts(seq, build_risk_set(seq))[kind]
    rng = np.random.default_rng(42)
    for _ in range(10):
        theta = rng.normal(scale=0.3, size=mm.n_params)
        v, g, H = evaluate(mm, theta)
        g_fd = central_diff(lambda th: evaluate(mm, th, False)[0], theta, 1e-5)
        assert np.max(np.abs(g - g_fd)) / max(1.0, np.max(np.abs(g))) < 1e-6
        H_fd = np.column_stack([
            (evaluate(mm, theta + e, False)[1] - evaluate(mm, theta - e, False)[1]) / 2e-5
            for e in np.eye(mm.n_params) * 1e-5])
        assert np.max(np.abs(H - H_fd)) / max(1.0, np.max(np.abs(H))) < 1e-4


@pytest.mark.parametrize("kind", ["poisson", "partial", "sampled", "case_control"])
def test_unit_scores_sum_to_gradient(kind, toy, toy_rst):
    mm = layouts(toy, toy_rst)[kind]
    theta = np.linspace(-0.3, 0.4, mm.n_params)
    _, g, _ = evaluate(mm, theta)
    np.testing.assert_allclose(unit_scores(mm, theta).sum(axis=0), g, atol=1e-12)
    assert unit_logliks(mm, theta).sum() == pytest.approx(evaluate(mm, theta)[0], abs=1e-12)


# ------------------------------------------------------------ plug-in identities

def test_zero_parameter_identities(toy, toy_rst):
    mms = layouts(toy, toy_rst)
    n = len(toy)
    assert evaluate(mms["partial"], np.zeros(3))[0] == pytest.approx(-n * math.log(6), abs=1e-12)
    assert evaluate(mms["sampled"], np.zeros(3))[0] == pytest.approx(-n * math.log(4), abs=1e-12)
    assert evaluate(mms["case_control"], np.zeros(3))[0] == pytest.approx(-n * math.log(2), abs=1e-12)
    mm = mms["poisson"]
    want = float(np.sum(mm.y * mm.offset - np.exp(mm.offset)))
    assert evaluate(mm, np.zeros(4))[0] == pytest.approx(want, abs=1e-12)


def test_zero_parameter_wtc_sized():
    n_nodes, n = 37, 481
    rng = np.random.default_rng(0)
    s = rng.integers(0, n_nodes, n)
    r = (s + rng.integers(1, n_nodes, n)) % n_nodes
    seq = EventSequence(np.arange(1.0, n + 1), s, r, [f"v{i}" for i in range(n_nodes)])
    mm = build_model_matrix(parse_formula("rec_vol"),
                            full_risk_observations(seq, build_risk_set(seq), [REC_VOL]))
    v = evaluate(mm, np.zeros(1))[0]
    assert v == pytest.approx(-481 * math.log(1332), abs=1e-9)
    assert v == pytest.approx(-3460.52, abs=0.005)


def test_zero_column_has_zero_gradient():
    D = np.column_stack([np.random.default_rng(0).normal(size=20), np.zeros(20)])
    _, g, _ = loglik_case_control(D, np.array([0.3, 1.0]))
    assert g[1] == 0.0


def test_overflow_guard():
    X = np.array([[1000.0], [0.0], [-1000.0]])
    v, g, H = loglik_partial(X, np.array([0, 3]), np.array([1]), np.array([5.0]))
    assert np.isfinite(v) and np.all(np.isfinite(g)) and np.all(np.isfinite(H))
    assert v == pytest.approx(-5000.0)
