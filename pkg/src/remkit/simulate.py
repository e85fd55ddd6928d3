"""Synthetic relational event sequences from a specified hazard model.

Endogenous statistics are step functions of the history, so with a
piecewise-constant baseline and no explicit time dependence every dyad's
hazard is piecewise constant between events and the next event can be drawn
exactly (competing exponential risks).  Global covariates make the hazard
vary between events; then events are drawn by thinning against a bound
computed on a grid.
"""

import json
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from . import _fallback as F
from .errors import InputError, SimulationError
from .events import EventSequence, RiskPolicy
from .stats import _MECH_CODE, _BLOCK_CODE, ExogenousTables, StatisticSpec, global_transform

DEFAULT_ORIGIN = datetime(2024, 1, 1)  # a Monday


@dataclass
class Effect:
    """Contribution of one statistic to the log-hazard: coef * x or func(x)."""

    spec: StatisticSpec
    coef: float = None
    func: object = None

    def __post_init__(self):
        if (self.coef is None) == (self.func is None):
            raise InputError(f"effect {self.spec.name}: give exactly one of coef or func")
        if self.coef is not None and not math.isfinite(self.coef):
            raise InputError(f"effect {self.spec.name}: coefficient must be finite")

    def __call__(self, x):
        return self.coef * x if self.func is None else self.func(x)


@dataclass
class GeneratorSpec:
    """Data-generating model.

    ``nodes`` is a count or a list of labels (one-mode), or a pair of those
    for a bipartite network.  ``baseline`` is a rate per time unit or a list
    of (start_time, rate) pieces.  ``global_effects`` maps a calendar
    transform name to a coefficient or a function.
    """

    nodes: object
    horizon: float
    baseline: object = 1.0
    effects: list = field(default_factory=list)
    global_effects: dict = field(default_factory=dict)
    mode: str = "one-mode"
    policy: str = None
    seed: int = 0
    exogenous: ExogenousTables = None
    calendar_origin: datetime = DEFAULT_ORIGIN
    max_events: int = 1_000_000

    def __post_init__(self):
        if not self.horizon > 0:
            raise InputError("horizon must be positive")
        pieces = self.baseline_pieces()
        if any(not r > 0 or not math.isfinite(r) for _, r in pieces):
            raise InputError("baseline rates must be positive and finite")
        for e in self.effects:
            s = e.spec
            if s.block in ("exp_decay", "temporal"):
                raise InputError(f"{s.name}: {s.block} statistics are not supported in generation")
            if s.mechanism in ("exogenous_global", "custom"):
                raise InputError(f"{s.name}: use global_effects for calendar covariates; "
                                 "custom predicates are not supported in generation")

    def baseline_pieces(self):
        if isinstance(self.baseline, (int, float)):
            return [(0.0, float(self.baseline))]
        pieces = sorted((float(a), float(b)) for a, b in self.baseline)
        if not pieces or pieces[0][0] > 0:
            raise InputError("baseline schedule must start at or before time 0")
        return pieces

    def labels(self):
        def expand(x, prefix):
            return [f"{prefix}{i}" for i in range(x)] if isinstance(x, int) else list(x)
        if self.mode == "bipartite":
            return expand(self.nodes[0], "s"), expand(self.nodes[1], "r")
        lab = expand(self.nodes, "n")
        return lab, lab

    def to_dict(self):
        return {
            "nodes": self.nodes if isinstance(self.nodes, int) else list(self.nodes),
            "horizon": self.horizon, "baseline": self.baseline, "mode": self.mode,
            "policy": self.policy, "seed": self.seed,
            "effects": [{"statistic": e.spec.to_dict(),
                         "coef": e.coef, "func": _describe(e.func)}
                        for e in self.effects],
            "global_effects": {k: (v if isinstance(v, (int, float)) else _describe(v))
                               for k, v in self.global_effects.items()},
            "calendar_origin": self.calendar_origin.isoformat(),
        }


def _describe(f):
    if f is None:
        return None
    return getattr(f, "describe", getattr(f, "__name__", "function"))


class _Hazard:
    """Log-hazard of every dyad given the current network state."""

    def __init__(self, spec, S, R, snodes, rnodes):
        self.spec = spec
        self.S, self.R = S, R
        halflives = []
        self.state = None
        closure = any(e.spec.mechanism in ("transitive_closure", "cyclic_closure")
                      for e in spec.effects)
        caps = {float(e.spec.params.get("cap", math.inf)) if e.spec.params.get("variant") != "indicator"
                else 1.0 for e in spec.effects
                if e.spec.mechanism in ("transitive_closure", "cyclic_closure")}
        if len(caps) > 1:
            raise InputError("generation supports one closure cap at a time")
        cap = caps.pop() if caps else math.inf
        self.state = F.NetworkState(len(snodes), len(rnodes), halflives, cap, closure)
        self.static = np.zeros(len(S))
        self.dynamic = []
        tables = spec.exogenous
        for e in spec.effects:
            s = e.spec
            if s.mechanism in _MECH_CODE:
                self.dynamic.append((e, _MECH_CODE[s.mechanism], _BLOCK_CODE[s.block], None))
            elif s.mechanism == "distance_to_last":
                D = tables.dyad_matrix(s.params["table"], rnodes, rnodes)
                np.fill_diagonal(D, np.where(np.isnan(np.diag(D)), 0.0, np.diag(D)))
                if np.any(np.isnan(D)):
                    raise InputError(f"{s.name}: distance table incomplete")
                self.dynamic.append((e, F.LAST_RECEIVER, None, D))
            elif s.mechanism == "exogenous_dyad":
                pairs = [(snodes[a], rnodes[b]) for a, b in zip(S, R)]
                self.static += e(tables.dyad_values(s.params["table"], pairs, 0.0,
                                                    s.params.get("default")))
            elif s.mechanism == "exogenous_node":
                role = s.params.get("role", "sender")
                lab = [snodes[a] for a in S] if role == "sender" else [rnodes[b] for b in R]
                self.static += e(tables.node_values(s.params["table"], lab, 0.0))

    def eta(self, t):
        out = self.static.copy()
        for e, mech, block, D in self.dynamic:
            if mech == F.LAST_RECEIVER:
                last = self.state.last_receiver[self.S]
                missing = float(e.spec.params.get("missing", 0.0))
                x = np.full(len(self.S), missing)
                has = last >= 0
                x[has] = np.log(D[self.R[has], last[has]] + 1.0)
            else:
                x = self.state.evaluate(mech, block, 0, self.S, self.R, t)
            out += e(x)
        return out


def _global_log(spec, t):
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    for name, eff in spec.global_effects.items():
        x = global_transform(name, t, spec.calendar_origin)
        out = out + (eff * x if isinstance(eff, (int, float)) else eff(x))
    return out


def _baseline(pieces, t):
    starts = np.array([a for a, _ in pieces])
    rates = np.array([b for _, b in pieces])
    return rates[np.searchsorted(starts, t, side="right") - 1]


def generate(spec):
    """Simulate an :class:`~remkit.events.EventSequence` on [0, horizon]."""
    rng = np.random.default_rng(spec.seed)
    snodes, rnodes = spec.labels()
    ns, nr = len(snodes), len(rnodes)
    pol = RiskPolicy(spec.policy or ("bipartite-crossproduct" if spec.mode == "bipartite"
                                     else "full-crossproduct-no-loops"))
    mask = np.ones((ns, nr), dtype=bool)
    if spec.mode == "one-mode" and not pol.allow_loops:
        np.fill_diagonal(mask, False)
    for a, b in pol.exclusions:
        if a in snodes and b in rnodes:
            mask[snodes.index(a), rnodes.index(b)] = False
    S, R = np.nonzero(mask)
    alive = np.ones(len(S), dtype=bool)
    haz = _Hazard(spec, S, R, snodes, rnodes)
    pieces = spec.baseline_pieces()
    starts = [a for a, _ in pieces] + [math.inf]
    T = spec.horizon
    t = 0.0
    times, ss, rr = [], [], []
    timed = bool(spec.global_effects)
    while len(times) < spec.max_events:
        eta = haz.eta(t)
        if not np.all(np.isfinite(eta)):
            raise SimulationError("non-finite hazard; the model explodes")
        top = eta[alive].max(initial=-np.inf)
        if top == -np.inf:
            break
        w = np.where(alive, np.exp(eta - top), 0.0)
        W = w.sum() * math.exp(top) if top < 709.0 else math.inf
        if not math.isfinite(W):
            raise SimulationError("total hazard overflow; the model explodes")
        t_next = _next_time(spec, pieces, starts, t, W, T, rng) if not timed else \
            _next_time_thinning(spec, pieces, t, W, T, rng)
        if t_next is None:
            break
        k = int(rng.choice(len(w), p=w / w.sum()))
        t = t_next
        times.append(t)
        ss.append(int(S[k]))
        rr.append(int(R[k]))
        haz.state.apply(int(S[k]), int(R[k]), t, 1.0)
        if pol.non_recurrent:
            alive[k] = False
    else:
        warnings.warn(f"stopped at max_events={spec.max_events}")
    if not times:
        warnings.warn("no events generated before the horizon")
        return None
    return EventSequence(times, ss, rr, snodes, None if spec.mode == "one-mode" else rnodes,
                         mode=spec.mode, time_window=(0.0, T),
                         calendar_origin=spec.calendar_origin)


def _next_time(spec, pieces, starts, t, W, T, rng):
    """Exact next event time for total rate baseline(u) * W, W fixed."""
    e = rng.exponential()
    k = int(np.searchsorted(starts, t, side="right") - 1)
    while True:
        rate = pieces[k][1] * W
        end = min(starts[k + 1], T)
        if t + e / rate <= end:
            t = t + e / rate
            return t if t <= T else None
        if end >= T:
            return None
        e -= (end - t) * rate
        t = end
        k += 1


def _bound(spec, pieces, a, b, n_grid):
    grid = np.linspace(a, b, n_grid)
    # include baseline changes and midnights, where step covariates jump
    extra = [s for s, _ in pieces if a <= s <= b]
    extra += list(np.arange(math.ceil(a), math.floor(b) + 1, 1.0))
    grid = np.unique(np.r_[grid, extra, np.nextafter(np.array(extra, float), np.inf)])
    vals = np.log(_baseline(pieces, grid)) + _global_log(spec, grid)
    return float(np.exp(vals.max()))


def _next_time_thinning(spec, pieces, t, W, T, rng, window=0.25):
    """Thinning with a piecewise bound over windows of ``window`` time units."""
    while t < T:
        end = min(t + window, T)
        M = _bound(spec, pieces, t, end, 64) * 1.05
        while True:
            t = t + rng.exponential() / (M * W)
            if t > end:
                t = end
                break
            actual = float(np.exp(np.log(_baseline(pieces, t)) + _global_log(spec, t)))
            if actual > M:
                M2 = _bound(spec, pieces, t, end, 4096) * 1.05
                if actual > M2:
                    raise SimulationError("dominating rate violated during thinning")
                M = M2
            if rng.uniform() * M <= actual:
                return t
    return None


def write_truth(spec, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")


def recovery_experiment(make_spec, fit_fn, truth, R, seed=0, level=0.95):
    """Bias, spread and Wald-interval coverage over R simulated replications.

    ``make_spec(seed)`` returns a GeneratorSpec; ``fit_fn(seq, seed)``
    returns a FitResult; ``truth`` maps coefficient names to true values.
    Failed replications are recorded, not raised.
    """
    from scipy.stats import norm

    z = norm.ppf(0.5 + level / 2)
    est = {k: [] for k in truth}
    cover = {k: [] for k in truth}
    failures = []
    seeds = np.random.SeedSequence(seed).generate_state(R)
    for rep, sd in enumerate(seeds):
        try:
            seq = generate(make_spec(int(sd)))
            res = fit_fn(seq, int(sd))
            if not res.converged:
                raise SimulationError(res.message)
        except Exception as exc:  # recorded per replication
            failures.append({"replication": rep, "error": str(exc)})
            continue
        for k, v in truth.items():
            b, s = res.coef(k), res.stderr(k)
            est[k].append(b)
            cover[k].append(abs(b - v) <= z * s)
    report = {}
    for k, v in truth.items():
        e = np.array(est[k])
        report[k] = {
            "truth": v, "n": len(e),
            "mean": float(e.mean()) if len(e) else math.nan,
            "bias": float(e.mean() - v) if len(e) else math.nan,
            "sd": float(e.std(ddof=1)) if len(e) > 1 else math.nan,
            "coverage": float(np.mean(cover[k])) if len(e) else math.nan,
        }
    return {"terms": report, "failures": failures, "R": R}
