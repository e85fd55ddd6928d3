import os

import numpy as np
import pytest

from remkit.events import EventSequence, build_risk_set
from remkit.simulate import Effect, GeneratorSpec, generate
from remkit.stats import StatisticSpec

HERE = os.path.dirname(__file__)
FIXTURES = os.path.join(HERE, "fixtures")


def toy_sequence():
    """Three actors, eight events; small enough to enumerate by hand."""
    s = [0, 1, 0, 2, 1, 2, 0, 1]
    r = [1, 0, 2, 0, 2, 1, 1, 0]
    t = [0.5, 1.0, 1.7, 2.2, 3.0, 3.4, 4.1, 5.0]
    return EventSequence(t, s, r, ["a", "b", "c"])


REC = StatisticSpec("rec", "reciprocity", "indicator")
REP = StatisticSpec("rep", "repetition", "indicator")
REC_VOL = StatisticSpec("rec_vol", "reciprocity", "volume")
ACT = StatisticSpec("act", "sender_activity", "volume")


def reciprocity_sequence(beta=0.5, seed=0, nodes=10, horizon=11.0):
    spec = GeneratorSpec(nodes=nodes, horizon=horizon, baseline=1.0,
                         effects=[Effect(REC, coef=beta)], seed=seed)
    return generate(spec)


@pytest.fixture
def toy():
    return toy_sequence()


@pytest.fixture
def toy_rst(toy):
    return build_risk_set(toy)


@pytest.fixture(scope="session")
def rec_seq():
    return reciprocity_sequence(seed=11)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
