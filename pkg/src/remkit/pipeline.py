"""End-to-end wiring: events -> statistics -> rows -> model matrix -> fit."""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .design import (build_model_matrix, full_risk_observations, poisson_observations,
                     sampled_observations)
from .errors import InputError
from .events import RiskPolicy, build_risk_set, load_risk_policy, parse_event_stream
from .fitting import OptimizerConfig, fit
from .formula import parse_formula
from .sampling import build_case_control, draw_shifts, sample_controls
from .stats import ExogenousTables, StatisticSpec, load_exogenous_table

REGIMES = ("poisson", "cox", "clogit", "ccgam", "ccgam-shifted")


@dataclass
class RunConfig:
    """Everything a fit run needs; loadable from a JSON file."""

    events: str = None
    formula: str = None
    regime: str = "cox"
    statistics: list = field(default_factory=list)
    schema: dict = None
    delimiter: str = ","
    mode: str = "one-mode"
    order_only: bool = False
    allow_loops: bool = False
    policy: str = None
    exogenous: list = field(default_factory=list)
    m: int = 1
    seed: int = 0
    shift: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    nu: dict = field(default_factory=dict)
    gof: dict = field(default_factory=dict)
    output: str = "out"
    factors: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InputError(f"unknown regime {self.regime!r}; choose from {', '.join(REGIMES)}")
        if self.regime == "clogit" and self.m < 1:
            raise InputError("clogit needs m >= 1")

    @classmethod
    def load(cls, path, overrides=None):
        if not os.path.exists(path):
            raise InputError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"config {path}: {exc}") from None
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        raw.setdefault("base_dir", os.path.dirname(os.path.abspath(path)))
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise InputError(f"config {path}: unknown keys {sorted(unknown)}")
        return cls(**raw)

    def path(self, p):
        if p is None:
            return None
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def stat_specs(self):
        return [s if isinstance(s, StatisticSpec) else StatisticSpec.from_dict(s)
                for s in self.statistics]


def load_inputs(cfg):
    """(sequence, risk timeline, exogenous tables, statistic specs) for a config."""
    if not cfg.events:
        raise InputError("no events file configured")
    seq = parse_event_stream(cfg.path(cfg.events), cfg.schema, cfg.delimiter, cfg.mode,
                             cfg.order_only, cfg.allow_loops)
    policy = load_risk_policy(cfg.path(cfg.policy)) if cfg.policy else None
    rst = build_risk_set(seq, policy)
    tables = ExogenousTables()
    for t in cfg.exogenous:
        load_exogenous_table(cfg.path(t["path"]), tables, t["name"], t["level"])
    return seq, rst, tables, cfg.stat_specs()


def _factors(cfg, tables):
    out = {}
    for name, f in (cfg.factors or {}).items():
        table = tables.node.get(f["table"])
        if table is None:
            raise InputError(f"factor {name}: no node table {f['table']!r}")
        out[name] = (f.get("role", "sender"), {k: v.values[-1] for k, v in table.items()})
    return out


def design_for(seq, rst, specs, formula, regime, m=1, seed=0, exogenous=None,
               shift=None, factors=None, model=None):
    """Model matrix (and the intermediate rows) for a regime."""
    by_name = {s.name: s for s in specs}
    model = model or parse_formula(formula, known=set(by_name),
                                   factors=None if factors is None else
                                   {"sender", "receiver", *factors})
    used = [by_name[v] for v in dict.fromkeys(model.variables)]
    strata = model.strata is not None
    if strata and model.strata != "type":
        raise InputError("only strata(type) is supported")
    rng = np.random.default_rng(seed)
    if regime == "poisson":
        data = poisson_observations(seq, rst, used, exogenous)
    elif regime == "cox":
        data = full_risk_observations(seq, rst, used, exogenous, strata=strata)
    elif regime == "clogit":
        sampled = sample_controls(rst, seq, m, rng)
        data = sampled_observations(seq, sampled, used, exogenous, strata=strata)
    elif regime in ("ccgam", "ccgam-shifted"):
        shifts = None
        if regime == "ccgam-shifted":
            shift = dict(shift or {})
            if seq.order_only:
                raise InputError("ccgam-shifted needs real timestamps")
            shifts = draw_shifts((seq.n_senders, seq.n_receivers),
                                 shift.get("distribution", "uniform"), shift.get("c"), rng,
                                 T=seq.time_window[1] - seq.time_window[0])
        row_types = seq.types if strata else None
        data = build_case_control(seq, rst, used, m, shifts, rng, exogenous, row_types)
    else:
        raise InputError(f"unknown regime {regime!r}")
    mm = build_model_matrix(model, data, by_name, factors=factors)
    return mm, data, model


def fit_sequence(seq, specs, formula, regime="cox", m=1, seed=0, exogenous=None, rst=None,
                 optimizer=None, nu=None, shift=None, factors=None, cv_seed=None):
    """Fit ``formula`` to ``seq``; returns (FitResult, ModelMatrix)."""
    rst = rst or build_risk_set(seq)
    mm, _, _ = design_for(seq, rst, specs, formula, regime, m, seed, exogenous, shift, factors)
    cfg = optimizer if isinstance(optimizer, OptimizerConfig) else OptimizerConfig(**(optimizer or {}))
    res = fit(mm, cfg, nu=nu, cv_seed=seed if cv_seed is None else cv_seed)
    res.regime_name = regime
    return res, mm


def run_fit(cfg):
    """Fit per the config; returns (FitResult, ModelMatrix, inputs)."""
    seq, rst, tables, specs = load_inputs(cfg)
    factors = _factors(cfg, tables)
    mm, data, model = design_for(seq, rst, specs, cfg.formula, cfg.regime, cfg.m, cfg.seed,
                                 tables, cfg.shift, factors or None)
    opt = OptimizerConfig(**cfg.optimizer)
    res = fit(mm, opt, nu=cfg.nu, cv_seed=cfg.seed)
    res.regime_name = cfg.regime
    return res, mm, (seq, rst, tables, specs, data, model)


def default_policy(seq):
    return RiskPolicy("bipartite-crossproduct" if seq.mode == "bipartite"
                      else "full-crossproduct-no-loops")
