import json
import os

import pytest

from remkit.cli import main

from conftest import FIXTURES

SIM = {"nodes": 10, "horizon": 12.0, "baseline": 1.0, "seed": 7,
       "effects": [{"statistic": {"name": "rec", "mechanism": "reciprocity",
                                  "block": "indicator"}, "coef": 0.5}]}
STATS = [{"name": "rec", "mechanism": "reciprocity", "block": "indicator"},
         {"name": "rep", "mechanism": "repetition", "block": "indicator"}]


def _write(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
    return str(path)


@pytest.fixture
def simulated(tmp_path):
    cfg = _write(tmp_path / "sim.json", SIM)
    events = tmp_path / "events.csv"
    assert main(["simulate", "--config", cfg, "--out-file", str(events)]) == 0
    return tmp_path, events


def _fit_cfg(tmp_path, events, formula="rec + rep", **kw):
    return _write(tmp_path / "fit.json", {"events": str(events), "formula": formula,
                                          "regime": "cox", "statistics": STATS, "seed": 1,
                                          "output": "out", **kw})


def test_simulate_byte_identical(tmp_path, capsys):
    cfg = _write(tmp_path / "sim.json", SIM)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", cfg, "--out-file", str(a), "--truth",
                 str(tmp_path / "truth.json")]) == 0
    assert main(["simulate", "--config", cfg, "--out-file", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    out = capsys.readouterr().out
    assert "seed=7" in out
    truth = json.loads((tmp_path / "truth.json").read_text())
    assert truth["effects"][0]["coef"] == 0.5


def test_simulate_seed_flag_changes_output(tmp_path):
    cfg = _write(tmp_path / "sim.json", SIM)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["simulate", "--config", cfg, "--out-file", str(a)])
    main(["simulate", "--config", cfg, "--out-file", str(b), "--seed", "8"])
    assert a.read_bytes() != b.read_bytes()


def test_simulate_zero_events(tmp_path, capsys):
    cfg = _write(tmp_path / "sim.json", {**SIM, "horizon": 1e-7, "effects": []})
    out = tmp_path / "e.csv"
    assert main(["simulate", "--config", cfg, "--out-file", str(out)]) == 0
    assert out.read_text() == "time,sender,receiver\n"
    assert "no events" in capsys.readouterr().err


def test_missing_events_file(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    cfg = _fit_cfg(tmp_path, missing)
    assert main(["fit", "--config", cfg]) == 1
    assert str(missing) in capsys.readouterr().err


def test_fit_round_trip_and_schema(simulated, capsys):
    tmp_path, events = simulated
    cfg = _fit_cfg(tmp_path, events)
    assert main(["fit", "--config", cfg]) == 0
    out = tmp_path / "out"
    fit = json.loads((out / "fit.json").read_text())
    with open(os.path.join(FIXTURES, "golden", "fit_cox.json"), encoding="utf-8") as fh:
        golden = json.load(fh)
    assert set(fit) == set(golden)
    assert fit["schema"] == golden["schema"]
    assert fit["n_events"] == golden["n_events"]
    for k, v in golden["coefficients"].items():
        assert fit["coefficients"][k] == pytest.approx(v, abs=1e-6)
        assert fit["se"][k] == pytest.approx(golden["se"][k], abs=1e-6)
    assert fit["loglik"] == pytest.approx(golden["loglik"], abs=1e-6)
    assert float((out / "aic.txt").read_text()) == pytest.approx(fit["aic"])
    assert not (out / "terms").exists()  # grids are written for smooth terms only
    gof = json.loads((out / "gof.json").read_text())
    assert set(gof) == {"rec", "rep"}
    assert all(r["p_value"] > 0.01 for r in gof.values())
    assert main(["report", str(out / "fit.json")]) == 0
    assert "rec" in capsys.readouterr().out


def test_gof_detects_omitted_reciprocity(simulated, capsys):
    tmp_path, events = simulated
    cfg = _fit_cfg(tmp_path, events, formula="rep")
    assert main(["fit", "--config", cfg]) == 0
    assert main(["gof", "--config", cfg, "--omitted", "rec", "--B", "2000"]) == 0
    gof = json.loads((tmp_path / "out" / "gof.json").read_text())
    assert gof["rec"]["p_value"] < 0.05
    assert gof["rec"]["method"] == "motion-simulation"


def test_gof_smooth_needs_B(simulated, capsys):
    tmp_path, events = simulated
    stats = STATS + [{"name": "act", "mechanism": "sender_activity", "block": "volume"}]
    cfg = _write(tmp_path / "fit.json", {"events": str(events), "formula": "rec + s(act, k=5)",
                                         "regime": "cox", "statistics": stats,
                                         "nu": {"s(act)": 1.0}, "output": "out"})
    assert main(["fit", "--config", cfg, "--B", "200"]) == 0
    assert main(["gof", "--config", cfg]) == 1
    assert "B" in capsys.readouterr().err
    assert main(["gof", "--config", cfg, "--B", "200"]) == 0
    assert (tmp_path / "out" / "terms" / "act.csv").read_text().startswith("x,fit,se,lower,upper")


def test_gof_regime_mismatch(simulated, capsys):
    tmp_path, events = simulated
    cfg = _fit_cfg(tmp_path, events)
    assert main(["fit", "--config", cfg]) == 0
    other = _write(tmp_path / "fit2.json", {**json.loads(open(cfg).read()), "regime": "poisson"})
    assert main(["gof", "--config", other, "--fit", str(tmp_path / "out" / "fit.json")]) == 1
    assert "regime" in capsys.readouterr().err


def test_ingest(tmp_path, capsys):
    src = os.path.join(FIXTURES, "overview", "visits.csv")
    out = tmp_path / "norm.csv"
    assert main(["ingest", src, "--out", str(out)]) == 0
    assert "events: 4" in capsys.readouterr().out
    assert out.exists()
