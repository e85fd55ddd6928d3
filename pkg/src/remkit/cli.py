"""Command-line front end: ``remkit ingest|stats|sample|simulate|fit|gof|report``.

Configuration comes from one JSON file; flags override it.  The only
environment variable read is REMKIT_SEED, which overrides the RNG seed when
no --seed flag is given.
"""

import argparse
import csv
import json
import math
import os
import re
import sys
import warnings

import numpy as np

from .diagnostics import (DEFAULT_B, aic, gof_report, gof_test_linear, gof_test_omitted,
                          gof_test_smooth)
from .errors import InputError, RemkitError
from .events import History, parse_event_stream
from .fitting import FIT_SCHEMA, OptimizerConfig, _finish, penalty_matrix, term_grid
from .pipeline import RunConfig, design_for, load_inputs, run_fit
from .sampling import build_case_control, draw_shifts
from .simulate import Effect, GeneratorSpec, generate, write_truth
from .stats import ExogenousTables, StatisticSpec, compute_columns, load_exogenous_table

EXIT_OK, EXIT_INPUT, EXIT_NONCONV = 0, 1, 2

SIM_FUNCS = {"sin": np.sin, "cos": np.cos, "log1p": np.log1p, "sqrt": np.sqrt,
             "square": np.square, "tanh": np.tanh}


def _seed(args, default):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("REMKIT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise InputError(f"REMKIT_SEED must be an integer, got {env!r}") from None
    return default


def _config(args):
    absp = lambda p: None if p is None else os.path.abspath(p)
    over = {"formula": args.formula, "regime": args.regime, "m": args.m,
            "output": absp(args.out), "events": absp(args.events)}
    cfg = RunConfig.load(args.config, over)
    cfg.output = cfg.path(cfg.output)
    cfg.seed = _seed(args, cfg.seed)
    return cfg


def _safe(label):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label).strip("_")


def _grid_for(block, specs):
    spec = {s.name: s for s in specs}.get(getattr(block.term, "var", None))
    if spec is not None and spec.params.get("transform") == "time_of_day" and block.term.kind == "nle":
        return np.linspace(0.0, 24.0, 97)
    return None


def _write_grids(res, specs, outdir):
    grids = {}
    tdir = os.path.join(outdir, "terms")
    for b in res.blocks:
        if b.term is None or b.term.kind == "linear":
            continue
        g = term_grid(res, b.label, _grid_for(b, specs))
        grids[b.label] = g
        os.makedirs(tdir, exist_ok=True)
        name = _safe(b.term.var if b.term.kind != "re" else b.label)
        with open(os.path.join(tdir, f"{name}.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            key = "level" if b.term.kind == "re" else "x"
            w.writerow([key, "fit", "se", "lower", "upper"])
            for x, f, s in zip(g[key], g["fit"], g["se"]):
                w.writerow([x, repr(f), repr(s), repr(f - 1.96 * s), repr(f + 1.96 * s)])
    return grids


def _gof_all(res, mm, B, seed, require_B=False):
    out = []
    for b in mm.blocks:
        if b.term is None:
            continue
        if b.penalized:
            if B is None:
                if require_B:
                    raise InputError(f"term {b.label} is smooth: the number of bridge "
                                     "replications B is required (--B)")
                B = DEFAULT_B
            out.append(gof_test_smooth(res, mm, b.label, B=B, seed=seed))
        elif b.size == 1:
            out.append(gof_test_linear(res, mm, b.label))
    return out


def cmd_ingest(args):
    seq = parse_event_stream(args.events, json.loads(args.schema) if args.schema else None,
                             args.delimiter, args.mode, args.order_only, args.allow_loops)
    print(f"events: {len(seq)}")
    print(f"senders: {seq.n_senders}  receivers: {seq.n_receivers}  mode: {seq.mode}")
    print(f"window: [{seq.time_window[0]:g}, {seq.time_window[1]:g}]  order_only: {seq.order_only}")
    if seq.jitter["rows"]:
        print(f"ties broken: {len(seq.jitter['rows'])} (epsilon {seq.jitter['epsilon']:.3g})")
    if args.out:
        seq.to_csv(args.out)
    return EXIT_OK


def cmd_stats(args):
    cfg = _config(args)
    seq, rst, tables, specs = load_inputs(cfg)
    cols = compute_columns(specs, History(seq, tables), seq.senders, seq.receivers, seq.times)
    out = args.out_file or os.path.join(cfg.output, "stats.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "sender", "receiver"] + [s.name for s in specs])
        for i in range(len(seq)):
            w.writerow([repr(float(seq.times[i])), seq.sender_nodes[seq.senders[i]],
                        seq.receiver_nodes[seq.receivers[i]]]
                       + [repr(float(cols[s.name].values[i])) for s in specs])
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sample(args):
    cfg = _config(args)
    seq, rst, tables, specs = load_inputs(cfg)
    rng = np.random.default_rng(cfg.seed)
    shifts = None
    if cfg.regime == "ccgam-shifted":
        shifts = draw_shifts((seq.n_senders, seq.n_receivers),
                             cfg.shift.get("distribution", "uniform"), cfg.shift.get("c"), rng,
                             T=seq.time_window[1] - seq.time_window[0])
    data = build_case_control(seq, rst, specs, cfg.m, shifts, rng, tables)
    out = args.out_file or os.path.join(cfg.output, "case_control.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    data.to_csv(out)
    print(f"wrote {out} ({len(data)} rows, {data.dropped} dropped)")
    return EXIT_OK


def _sim_func(e):
    """``scale * func(freq * x + phase)`` from a JSON effect entry."""
    if e["func"] not in SIM_FUNCS:
        raise InputError(f"unknown effect function {e['func']!r}; choose from {sorted(SIM_FUNCS)}")
    f = SIM_FUNCS[e["func"]]
    a, w, c = float(e.get("scale", 1.0)), float(e.get("freq", 1.0)), float(e.get("phase", 0.0))

    def effect(x):
        return a * f(w * np.asarray(x, dtype=float) + c)
    effect.describe = {k: e[k] for k in ("func", "scale", "freq", "phase") if k in e}
    return effect


def load_sim_config(path, seed=None):
    if not os.path.exists(path):
        raise InputError(f"simulation config not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from None
    base = os.path.dirname(os.path.abspath(path))
    tables = ExogenousTables()
    for t in raw.get("exogenous", []):
        p = t["path"] if os.path.isabs(t["path"]) else os.path.join(base, t["path"])
        load_exogenous_table(p, tables, t["name"], t["level"])
    effects = []
    for e in raw.get("effects", []):
        spec = StatisticSpec.from_dict(e["statistic"])
        if "func" in e:
            effects.append(Effect(spec, func=_sim_func(e)))
        else:
            effects.append(Effect(spec, coef=float(e["coef"])))
    global_effects = {}
    for name, g in raw.get("global_effects", {}).items():
        global_effects[name] = float(g) if isinstance(g, (int, float)) else _sim_func(g)
    nodes = raw.get("nodes", 10)
    if isinstance(nodes, list) and raw.get("mode") == "bipartite":
        nodes = tuple(nodes)
    try:
        return GeneratorSpec(
            nodes=nodes, horizon=float(raw["horizon"]), baseline=raw.get("baseline", 1.0),
            effects=effects, global_effects=global_effects,
            mode=raw.get("mode", "one-mode"), policy=raw.get("policy"),
            seed=raw.get("seed", 0) if seed is None else seed, exogenous=tables,
            max_events=int(raw.get("max_events", 1_000_000)))
    except KeyError as exc:
        raise InputError(f"{path}: missing key {exc}") from None


def cmd_simulate(args):
    seed = _seed(args, None)
    spec = load_sim_config(args.config, seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        seq = generate(spec)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out = args.out_file or "events.csv"
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    n = 0
    if seq is None:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write("time,sender,receiver\n")
    else:
        seq.to_csv(out)
        n = len(seq)
    if args.truth:
        write_truth(spec, args.truth)
    print(f"n={n} horizon={spec.horizon:g} seed={spec.seed}")
    return EXIT_OK


def cmd_fit(args):
    cfg = _config(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res, mm, (seq, rst, tables, specs, data, model) = run_fit(cfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    os.makedirs(cfg.output, exist_ok=True)
    grids = _write_grids(res, specs, cfg.output) if res.converged else {}
    fit_json = res.to_dict()
    fit_json["formula"] = str(model)
    fit_json["regime"] = cfg.regime
    fit_json["layout"] = mm.kind
    fit_json["seed"] = cfg.seed
    fit_json["m"] = cfg.m
    fit_json["nu"] = {k: float(v) for k, v in res.nu.items()}
    with open(os.path.join(cfg.output, "fit.json"), "w", encoding="utf-8") as fh:
        json.dump(fit_json, fh, indent=2)
        fh.write("\n")
    value = aic(res)
    with open(os.path.join(cfg.output, "aic.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"{value!r}\n")
    if not res.converged:
        print(f"inference: fit did not converge: {res.message}", file=sys.stderr)
        return EXIT_NONCONV
    B = args.B if args.B is not None else cfg.gof.get("B")
    gofs = _gof_all(res, mm, B, cfg.seed)
    gof_report(gofs, os.path.join(cfg.output, "gof.json"))
    _print_table(fit_json)
    return EXIT_OK


def _refit_at(cfg, fit_json):
    seq, rst, tables, specs = load_inputs(cfg)
    factors = None
    mm, data, model = design_for(seq, rst, specs, fit_json.get("formula", cfg.formula),
                                 cfg.regime, fit_json.get("m", cfg.m),
                                 fit_json.get("seed", cfg.seed), tables, cfg.shift, factors)
    names = list(fit_json["coefficients"])
    if fit_json.get("layout", mm.kind) != mm.kind or names != list(mm.column_names):
        from .errors import RegimeMismatchError
        raise RegimeMismatchError("fit artifacts do not match the data and regime in the config")
    theta = np.array([fit_json["coefficients"][n] for n in names])
    nu = {k: float(v) for k, v in fit_json.get("nu", {}).items()}
    res = _finish(mm, theta, nu, penalty_matrix(mm, nu), fit_json.get("iterations", 0),
                  fit_json.get("converged", True), False, "", "newton")
    return res, mm


def cmd_gof(args):
    cfg = _config(args)
    fit_path = args.fit or os.path.join(cfg.output, "fit.json")
    if not os.path.exists(fit_path):
        raise InputError(f"fit artifacts not found: {fit_path}")
    with open(fit_path, encoding="utf-8") as fh:
        fit_json = json.load(fh)
    if fit_json.get("schema") != FIT_SCHEMA:
        raise InputError(f"{fit_path}: unsupported schema {fit_json.get('schema')!r}")
    if fit_json.get("regime") != cfg.regime:
        from .errors import RegimeMismatchError
        raise RegimeMismatchError(f"fit regime {fit_json.get('regime')!r} differs from "
                                  f"config regime {cfg.regime!r}")
    res, mm = _refit_at(cfg, fit_json)
    B = args.B if args.B is not None else cfg.gof.get("B")
    gofs = _gof_all(res, mm, B, cfg.seed, require_B=True)
    if args.omitted:
        if B is None:
            raise InputError("omitted-term tests need the number of replications B (--B)")
        seq, rst, tables, specs = load_inputs(cfg)
        head, bar, tail = fit_json.get("formula", cfg.formula).partition("|")
        formula = " + ".join([head.strip()] + args.omitted) + (f" | {tail.strip()}" if bar else "")
        mm_ext, _, model = design_for(seq, rst, specs, formula, cfg.regime,
                                      fit_json.get("m", cfg.m), fit_json.get("seed", cfg.seed),
                                      tables, cfg.shift, None)
        for term in model.terms[len(model.terms) - len(args.omitted):]:
            gofs.append(gof_test_omitted(res, mm_ext, term.label, B=B, seed=cfg.seed))
    out = args.out_file or os.path.join(cfg.output, "gof.json")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    report = gof_report(gofs, out)
    for term, r in report.items():
        print(f"{term:30s} T={r['statistic']:.4f}  p={r['p_value']:.4f}  ({r['method']})")
    return EXIT_OK


def _print_table(fit_json):
    print(f"regime: {fit_json['regime']}  events: {fit_json['n_events']}  "
          f"converged: {fit_json['converged']}  iterations: {fit_json['iterations']}")
    print(f"{'term':32s} {'estimate':>10s} {'se':>10s}")
    for name, v in fit_json["coefficients"].items():
        print(f"{name:32s} {v:10.4f} {fit_json['se'][name]:10.4f}")
    print(f"loglik: {fit_json['loglik']:.4f}  edf: {fit_json['edf_total']:.3f}  "
          f"AIC: {fit_json['aic']:.4f}")


def cmd_report(args):
    path = args.fit
    if not os.path.exists(path):
        raise InputError(f"fit artifacts not found: {path}")
    with open(path, encoding="utf-8") as fh:
        fit_json = json.load(fh)
    _print_table(fit_json)
    gof_path = os.path.join(os.path.dirname(path), "gof.json")
    if os.path.exists(gof_path):
        with open(gof_path, encoding="utf-8") as fh:
            for term, r in json.load(fh).items():
                print(f"gof {term:28s} T={r['statistic']:.4f}  p={r['p_value']:.4f}")
    return EXIT_OK


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="JSON run configuration")
    p.add_argument("--formula")
    p.add_argument("--regime", choices=["poisson", "cox", "clogit", "ccgam", "ccgam-shifted"])
    p.add_argument("--m", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--events")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="worker cap (computation is single-threaded apart from BLAS)")


def build_parser():
    ap = argparse.ArgumentParser(prog="remkit", description="Relational event modelling toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse and summarise an event file")
    p.add_argument("events")
    p.add_argument("--schema", help='JSON column mapping, e.g. {"time": "ts"}')
    p.add_argument("--delimiter", default=",")
    p.add_argument("--mode", default="one-mode", choices=["one-mode", "bipartite"])
    p.add_argument("--order-only", action="store_true")
    p.add_argument("--allow-loops", action="store_true")
    p.add_argument("--out", help="write the normalised events CSV here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="statistics of each observed event")
    _common(p)
    p.add_argument("--out-file")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sample", help="export the case-control dataset")
    _common(p)
    p.add_argument("--out-file")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("simulate", help="generate a synthetic event sequence")
    p.add_argument("--config", required=True, help="JSON generator specification")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-file", help="events CSV (default events.csv)")
    p.add_argument("--truth", help="write the generating spec as JSON here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a model and write fit.json, terms/, gof.json")
    _common(p)
    p.add_argument("--B", type=int, help="bridge replications for smooth-term tests")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gof", help="goodness-of-fit tests for saved fit artifacts")
    _common(p)
    p.add_argument("--fit", help="fit.json (default <out>/fit.json)")
    p.add_argument("--omitted", action="append", default=[], metavar="TERM",
                   help="formula term left out of the fit to test for (repeatable)")
    p.add_argument("--B", type=int)
    p.add_argument("--out-file")
    p.set_defaults(func=cmd_gof)

    p = sub.add_parser("report", help="print a saved fit")
    p.add_argument("fit")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INPUT
    except RemkitError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NONCONV


if __name__ == "__main__":
    sys.exit(main())
