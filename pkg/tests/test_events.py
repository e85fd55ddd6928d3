import io
import math

import numpy as np
import pytest

from remkit.errors import (DataConsistencyError, EmptySequenceError, InputError, ParseError,
                           SchemaError)
from remkit.events import (EventSequence, History, RiskPolicy, break_ties, build_risk_set,
                           load_risk_policy, parse_event_stream)


def test_three_row_echo():
    seq = parse_event_stream("time,sender,receiver\n1.0,a,b\n2.0,b,a\n2.5,a,c\n")
    assert len(seq) == 3
    assert seq.sender_nodes == ["a", "b", "c"]
    assert list(seq.times) == [1.0, 2.0, 2.5]
    assert [seq.event(i).sender for i in range(3)] == ["a", "b", "a"]


def test_empty_file_with_header():
    with pytest.raises(EmptySequenceError, match="empty sequence"):
        parse_event_stream("time,sender,receiver\n")


def test_missing_column():
    with pytest.raises(SchemaError, match="receiver"):
        parse_event_stream("time,sender,target\n1,a,b\n")


def test_schema_mapping_and_delimiter():
    seq = parse_event_stream("ts;from;to\n1;x;y\n2;y;x\n", {"time": "ts", "sender": "from",
                             "receiver": "to"}, delimiter=";")
    assert len(seq) == 2 and seq.receiver_nodes == ["x", "y"]


def test_bad_timestamp_reports_line():
    with pytest.raises(ParseError, match="line 3"):
        parse_event_stream("time,sender,receiver\n1,a,b\nlater,b,a\n")


def test_self_loop_refused_unless_allowed():
    with pytest.raises(ParseError, match="self-loop"):
        parse_event_stream("time,sender,receiver\n1,a,a\n")
    seq = parse_event_stream("time,sender,receiver\n1,a,a\n2,a,b\n", allow_loops=True)
    assert len(seq) == 2


def test_sorting_and_ties():
    with pytest.warns(UserWarning, match="tied"):
        seq = parse_event_stream("time,sender,receiver\n3,a,b\n1,b,a\n1,a,c\n")
    assert np.all(np.diff(seq.times) > 0)
    # input order kept within the tie
    assert seq.event(0).receiver == "a" and seq.event(1).receiver == "c"
    assert seq.times[1] - seq.times[0] < 1e-6


def test_break_ties_offsets():
    t, rec = break_ties([0.0, 1.0, 1.0, 1.0, 3.0])
    eps = rec["epsilon"]
    assert eps == pytest.approx(1e-9 * 1.5)
    assert t[2] - t[1] == pytest.approx(eps) and t[3] - t[1] == pytest.approx(2 * eps)
    assert [k for _, k in rec["rows"]] == [1, 2]


def test_order_only_uses_ranks():
    seq = parse_event_stream("sender,receiver\na,b\nb,a\nc,a\n", order_only=True)
    assert list(seq.times) == [1.0, 2.0, 3.0] and seq.order_only


def test_iso_timestamps_are_days_since_first_midnight():
    seq = parse_event_stream("time,sender,receiver\n2024-01-02T06:00:00,a,b\n"
                             "2024-01-03T18:00:00,b,a\n")
    assert seq.times[0] == pytest.approx(0.25)
    assert seq.times[1] == pytest.approx(1.75)
    assert seq.calendar_origin.day == 2


def test_types_and_weights():
    seq = parse_event_stream("time,sender,receiver,type,weight\n1,a,b,x,2\n2,b,a,y,0.5\n")
    assert seq.type_levels == ["x", "y"] and list(seq.types) == [0, 1]
    assert list(seq.weights) == [2.0, 0.5]
    with pytest.raises(ParseError, match="declared"):
        parse_event_stream("time,sender,receiver,type\n1,a,b,z\n", type_levels=["x"])


def test_file_source(tmp_path):
    p = tmp_path / "ev.csv"
    p.write_text("time,sender,receiver\n1,a,b\n")
    assert len(parse_event_stream(str(p))) == 1
    assert len(parse_event_stream(io.StringIO("time,sender,receiver\n1,a,b\n"))) == 1


def test_sequence_validation():
    with pytest.raises(InputError, match="strictly increasing"):
        EventSequence([1.0, 1.0], [0, 1], [1, 0], ["a", "b"])
    with pytest.raises(InputError):
        EventSequence([1.0], [0], [5], ["a", "b"])


def test_history_is_strict():
    seq = EventSequence([1.0, 2.0, 3.0], [0, 1, 0], [1, 0, 1], ["a", "b"])
    h = History(seq)
    assert len(h.before(2.0)) == 1
    assert len(h.before(2.0 + 1e-12)) == 2
    s, _, t, _ = h.arrays(3.0)
    assert list(t) == [1.0, 2.0]


def test_full_risk_set_size_37_actors():
    n = 37
    rng = np.random.default_rng(0)
    s = rng.integers(0, n, 50)
    r = (s + rng.integers(1, n, 50)) % n
    seq = EventSequence(np.arange(1, 51, dtype=float), s, r, [f"v{i}" for i in range(n)])
    rst = build_risk_set(seq)
    assert all(rst.size_at(t) == 1332 for t in (0.5, 10.0, 50.0))


def test_bipartite_cross_product():
    seq = EventSequence([1.0], [0], [2], ["s1", "s2"], ["r1", "r2", "r3"], mode="bipartite")
    assert build_risk_set(seq).size_at(1.0) == 6


def test_non_recurrent_membership():
    seq = EventSequence([5.0, 6.0], [0, 1], [1, 0], ["a", "b"])
    rst = build_risk_set(seq, RiskPolicy("non-recurrent"))
    assert rst.at_risk(0, 1, 5.0) and rst.at_risk(0, 1, 4.0)
    assert not rst.at_risk(0, 1, 5.0 + 1e-9)


def test_event_outside_risk_set_names_index():
    seq = EventSequence([1.0, 2.0], [0, 0], [1, 1], ["a", "b"])
    with pytest.raises(DataConsistencyError, match="event 1"):
        build_risk_set(seq, RiskPolicy("non-recurrent"))
    with pytest.raises(DataConsistencyError, match="event 0"):
        build_risk_set(seq, RiskPolicy("exclusion", exclusions={("a", "b")}))


def test_node_entry_and_exit():
    seq = EventSequence([1.0, 4.0], [0, 1], [1, 0], ["a", "b", "c"])
    pol = RiskPolicy(node_events=((2.0, "c", "enter"), (3.0, "a", "exit"), (3.5, "a", "enter")))
    rst = build_risk_set(seq, pol)
    assert rst.size_at(1.0) == 2          # c not yet present
    assert rst.size_at(2.0) == 6          # mutation applies at t >= x
    assert rst.size_at(3.2) == 2          # a gone
    assert rst.size_at(4.0) == 6


def test_load_risk_policy(tmp_path):
    p = tmp_path / "pol.json"
    p.write_text('{"policy": "exclusion", "exclusions": [["a", "c"]]}')
    pol = load_risk_policy(str(p))
    seq = EventSequence([1.0], [0], [1], ["a", "b", "c"])
    assert build_risk_set(seq, pol).size_at(1.0) == 5
    with pytest.raises(InputError, match="not found"):
        load_risk_policy(str(tmp_path / "nope.json"))


def test_risk_sampling_excludes_case():
    seq = EventSequence([1.0], [0], [1], ["a", "b", "c", "d"])
    rst = build_risk_set(seq)
    rng = np.random.default_rng(1)
    for _ in range(50):
        cs, cr = rst.sample(1.0, 3, (0, 1), rng)
        pairs = set(zip(cs.tolist(), cr.tolist()))
        assert len(pairs) == 3 and (0, 1) not in pairs
        assert all(s != r for s, r in pairs)
    cs, _ = rst.sample(1.0, 100, (0, 1), rng)
    assert len(cs) == 11


def test_csv_round_trip(tmp_path, toy):
    p = tmp_path / "out.csv"
    toy.to_csv(str(p))
    back = parse_event_stream(str(p))
    assert np.allclose(back.times, toy.times)
    assert list(back.senders) == list(toy.senders)
