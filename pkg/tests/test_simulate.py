import math
import warnings

import numpy as np
import pytest
from scipy.stats import chisquare

from remkit.errors import InputError, SimulationError
from remkit.simulate import Effect, GeneratorSpec, generate, recovery_experiment
from remkit.stats import StatisticSpec, global_transform

from conftest import REC, reciprocity_sequence


def _bip(seed, **kw):
    return GeneratorSpec(nodes=(2, 5), mode="bipartite", horizon=100.0, baseline=1.0,
                         seed=seed, **kw)


def test_baseline_only_count():
    seq = generate(_bip(3))
    # 10 dyads at rate 1 over 100 time units: Poisson(1000)
    assert abs(len(seq) - 1000) < 3 * math.sqrt(1000)
    assert np.all(np.diff(seq.times) > 0) and seq.times[-1] <= 100.0


def test_baseline_dyad_choice_uniform():
    seq = generate(_bip(4))
    counts = np.bincount(seq.senders * 5 + seq.receivers, minlength=10)
    assert chisquare(counts).pvalue > 0.001


def test_piecewise_baseline():
    spec = GeneratorSpec(nodes=(2, 5), mode="bipartite", horizon=100.0,
                         baseline=[(0.0, 0.5), (50.0, 2.0)], seed=5)
    seq = generate(spec)
    early = int(np.sum(seq.times < 50))
    late = len(seq) - early
    assert abs(early - 250) < 3 * math.sqrt(250)
    assert abs(late - 1000) < 3 * math.sqrt(1000)


def _reciprocal_fraction(seq):
    seen = set()
    hits = 0
    for s, r in zip(seq.senders, seq.receivers):
        hits += (int(r), int(s)) in seen
        seen.add((int(s), int(r)))
    return hits / len(seq)


def test_reciprocity_effect_shows():
    weak = reciprocity_sequence(0.0, seed=1, horizon=3.0)
    strong = reciprocity_sequence(5.0, seed=1, horizon=3.0)
    assert _reciprocal_fraction(strong) > _reciprocal_fraction(weak) + 0.2


def test_global_weekday_effect():
    spec = GeneratorSpec(nodes=(2, 5), mode="bipartite", horizon=70.0, baseline=1.0,
                         global_effects={"weekday": math.log(3.0)}, seed=6)
    seq = generate(spec)
    wd = global_transform("weekday", seq.times, spec.calendar_origin)
    # 50 weekdays at rate 30, 20 weekend days at rate 10
    assert abs(wd.sum() - 1500) < 3 * math.sqrt(1500)
    assert abs((1 - wd).sum() - 200) < 3 * math.sqrt(200)


def test_reproducible():
    a = reciprocity_sequence(0.5, seed=9)
    b = reciprocity_sequence(0.5, seed=9)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.senders, b.senders)


def test_refusals():
    dec = StatisticSpec("d", "repetition", "exp_decay", 1.0)
    with pytest.raises(InputError):
        GeneratorSpec(nodes=4, horizon=1.0, effects=[Effect(dec, coef=1.0)])
    with pytest.raises(InputError):
        GeneratorSpec(nodes=4, horizon=0.0)
    with pytest.raises(InputError):
        GeneratorSpec(nodes=4, horizon=1.0, baseline=-1.0)
    with pytest.raises(InputError):
        Effect(REC)
    with pytest.raises(InputError):
        Effect(REC, coef=math.inf)


def test_explosion_detected():
    vol = StatisticSpec("v", "repetition", "volume")
    spec = GeneratorSpec(nodes=3, horizon=100.0, effects=[Effect(vol, coef=800.0)], seed=0)
    with pytest.raises(SimulationError):
        generate(spec)


def test_zero_events():
    spec = GeneratorSpec(nodes=3, horizon=1e-6, baseline=1e-3, seed=0)
    with pytest.warns(UserWarning, match="no events"):
        assert generate(spec) is None


def test_truth_dict_roundtrip():
    spec = GeneratorSpec(nodes=4, horizon=2.0, effects=[Effect(REC, func=np.tanh)])
    d = spec.to_dict()
    assert d["effects"][0]["func"] == "tanh"
    assert d["effects"][0]["statistic"]["mechanism"] == "reciprocity"


def test_recovery_records_failures():
    def make(seed):
        return GeneratorSpec(nodes=5, horizon=5.0, effects=[Effect(REC, coef=0.5)], seed=seed)

    calls = []

    def fit_fn(seq, seed):
        calls.append(seed)
        if len(calls) == 1:
            raise RuntimeError("boom")
        from remkit.pipeline import fit_sequence
        return fit_sequence(seq, [REC], "rec", "cox")[0]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = recovery_experiment(make, fit_fn, {"rec": 0.5}, R=3, seed=1)
    assert rep["terms"]["rec"]["n"] == 2
    assert len(rep["failures"]) == 1
