"""Endogenous and exogenous covariate processes.

Every statistic is evaluated on the history strictly before the query time.
The four building blocks are indicator, volume, exponential decay and
temporal (elapsed time since the anchoring event).
"""

import csv
import math
import os
from dataclasses import dataclass, field
from datetime import datetime
from itertools import combinations
from math import comb

import numpy as np

from . import _fallback as F
from . import kernels
from .errors import InputError, OrderOnlyError, StatisticError

MECHANISMS = (
    "reciprocity", "repetition", "sender_activity", "receiver_popularity",
    "transitive_closure", "cyclic_closure", "exogenous_node", "exogenous_dyad",
    "exogenous_global", "distance_to_last", "custom",
)
BLOCKS = ("indicator", "volume", "exp_decay", "temporal")
GLOBAL_TRANSFORMS = ("time_of_day", "day_of_week", "weekday", "calendar_time")

_MECH_CODE = {
    "repetition": F.REPETITION, "reciprocity": F.RECIPROCITY,
    "sender_activity": F.SENDER_ACTIVITY, "receiver_popularity": F.RECEIVER_POPULARITY,
    "transitive_closure": F.TRANSITIVE, "cyclic_closure": F.CYCLIC,
}
_BLOCK_CODE = {"indicator": F.INDICATOR, "volume": F.VOLUME,
               "exp_decay": F.EXP_DECAY, "temporal": F.TEMPORAL}
_TWO_MODE_REFUSED = ("reciprocity", "transitive_closure", "cyclic_closure")


@dataclass
class StatisticSpec:
    """Declarative definition of one covariate process.

    ``params`` carries mechanism-specific settings:

    - closure: ``cap`` (min-cap on each leg's volume, default inf) or
      ``variant="indicator"`` (count distinct intermediaries; same as cap=1)
    - exogenous_node: ``table``, ``role`` in sender | receiver | diff | absdiff
    - exogenous_dyad: ``table``, optional ``default`` for absent dyads
    - exogenous_global: ``transform`` (time_of_day, day_of_week, weekday,
      calendar_time) or ``table``
    - distance_to_last: ``table`` (static receiver-by-receiver distances),
      ``missing`` value when the sender has no prior event (default 0)
    - custom: ``predicate(event, row) -> bool``; event and row are
      (sender, receiver, time) code tuples
    - any endogenous mechanism: ``same_type=True`` restricts the history to
      events of the row's type
    """

    name: str
    mechanism: str
    block: str = "volume"
    half_life: float = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise StatisticError(f"unknown mechanism {self.mechanism!r}")
        if self.block not in BLOCKS:
            raise StatisticError(f"unknown building block {self.block!r}")
        if self.block == "exp_decay":
            if self.half_life is None or not self.half_life > 0:
                raise StatisticError(f"{self.name}: exp_decay needs a positive half-life")
            if self.mechanism in ("transitive_closure", "cyclic_closure"):
                raise StatisticError(f"{self.name}: exp_decay is not defined for closure")

    @property
    def endogenous(self):
        return self.mechanism in _MECH_CODE or self.mechanism in ("distance_to_last", "custom")

    @property
    def time_dependent(self):
        return self.block in ("exp_decay", "temporal") or self.mechanism == "exogenous_global"

    def to_dict(self):
        p = {k: v for k, v in self.params.items() if not callable(v)}
        d = {"name": self.name, "mechanism": self.mechanism, "block": self.block, "params": p}
        if self.half_life is not None:
            d["half_life"] = self.half_life
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], d["mechanism"], d.get("block", "volume"),
                   d.get("half_life"), dict(d.get("params", {})))


@dataclass
class CovariateColumn:
    spec: StatisticSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise StatisticError(f"{self.spec.name}: non-finite values")


# ---------------------------------------------------------------- exogenous


class StepSeries:
    """Right-continuous step function: the value at t is the last record with time <= t."""

    def __init__(self, times, values):
        order = np.argsort(times, kind="stable")
        self.times = np.asarray(times, dtype=float)[order]
        self.values = np.asarray(values, dtype=float)[order]

    def __call__(self, t):
        k = np.searchsorted(self.times, t, side="right") - 1
        if np.any(k < 0):
            raise StatisticError("exogenous value requested before its first timestamp")
        return self.values[k]


class ExogenousTables:
    """Node-, dyad- and global-level covariate tables keyed by name."""

    def __init__(self):
        self.node = {}
        self.dyad = {}
        self.glob = {}

    def add_node(self, name, mapping):
        """``mapping``: node label -> value or StepSeries."""
        self.node[name] = {k: _as_series(v) for k, v in mapping.items()}

    def add_dyad(self, name, mapping):
        """``mapping``: (sender, receiver) labels -> value or StepSeries."""
        self.dyad[name] = {tuple(k): _as_series(v) for k, v in mapping.items()}

    def add_global(self, name, series):
        self.glob[name] = _as_series(series)

    def node_values(self, name, labels, t):
        table = self._get(self.node, name, "node")
        out = np.empty(len(labels))
        for i, (lab, tt) in enumerate(zip(labels, np.broadcast_to(t, len(labels)))):
            if lab not in table:
                raise StatisticError(f"exogenous table {name!r} has no entry for node {lab!r}")
            out[i] = table[lab](tt)
        return out

    def dyad_values(self, name, pairs, t, default=None):
        table = self._get(self.dyad, name, "dyad")
        out = np.empty(len(pairs))
        for i, (p, tt) in enumerate(zip(pairs, np.broadcast_to(t, len(pairs)))):
            ser = table.get(p)
            if ser is None:
                if default is None:
                    raise StatisticError(
                        f"exogenous table {name!r} has no entry for dyad {p[0]!r}->{p[1]!r}")
                out[i] = default
            else:
                out[i] = ser(tt)
        return out

    def dyad_matrix(self, name, rows, cols, symmetric=True):
        """Static dense matrix of a dyad table; transposed entries fill gaps."""
        table = self._get(self.dyad, name, "dyad")
        out = np.full((len(rows), len(cols)), np.nan)
        ri = {v: k for k, v in enumerate(rows)}
        ci = {v: k for k, v in enumerate(cols)}
        for (a, b), ser in table.items():
            v = ser.values[-1]
            if a in ri and b in ci:
                out[ri[a], ci[b]] = v
            if symmetric and b in ri and a in ci and np.isnan(out[ri[b], ci[a]]):
                out[ri[b], ci[a]] = v
        return out

    def global_values(self, name, t):
        return self._get(self.glob, name, "global")(t)

    @staticmethod
    def _get(d, name, kind):
        if name not in d:
            raise StatisticError(f"no {kind}-level exogenous table named {name!r}")
        return d[name]


def _as_series(v):
    if isinstance(v, StepSeries):
        return v
    if isinstance(v, tuple) and len(v) == 2:
        return StepSeries(*v)
    return StepSeries([-np.inf], [float(v)])


def load_exogenous_table(path, tables, name, level, delimiter=","):
    """Read a CSV table into ``tables``.

    Columns: ``node`` (node level) or ``sender,receiver`` (dyad level) or
    neither (global), an optional ``time`` and a ``value``.  Without a time
    column the table is static.
    """
    if not os.path.exists(path):
        raise InputError(f"exogenous table not found: {path}")
    with open(path, encoding="utf-8-sig", newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter=delimiter))
    if not rows:
        raise InputError(f"exogenous table {path} is empty")
    if "value" not in rows[0]:
        raise InputError(f"exogenous table {path} lacks a 'value' column")
    timed = "time" in rows[0]
    groups = {}
    for lineno, row in enumerate(rows, start=2):
        if level == "node":
            key = row["node"].strip()
        elif level == "dyad":
            key = (row["sender"].strip(), row["receiver"].strip())
        elif level == "global":
            key = None
        else:
            raise InputError(f"unknown exogenous level {level!r}")
        try:
            t = float(row["time"]) if timed else -np.inf
            v = float(row["value"])
        except ValueError:
            raise InputError(f"{path} line {lineno}: bad number") from None
        ts, vs = groups.setdefault(key, ([], []))
        ts.append(t)
        vs.append(v)
    series = {k: StepSeries(ts, vs) for k, (ts, vs) in groups.items()}
    if level == "node":
        tables.add_node(name, series)
    elif level == "dyad":
        tables.add_dyad(name, series)
    else:
        tables.add_global(name, series[None])
    return tables


def global_transform(name, t, origin=None):
    """Calendar covariates of times measured in days since ``origin``.

    time_of_day is in hours [0, 24); day_of_week is 0 (Monday) to 6;
    weekday is 1 on Monday to Friday; calendar_time is t itself.
    """
    t = np.asarray(t, dtype=float)
    if name == "calendar_time":
        return t.copy()
    if name not in GLOBAL_TRANSFORMS:
        raise StatisticError(f"unknown global transform {name!r}")
    if origin is None:
        raise StatisticError(f"{name} needs a calendar origin")
    if isinstance(origin, datetime):
        origin = origin.replace(tzinfo=None)
    base = np.datetime64(origin, "us")
    stamp = base + np.round(t * 86400e6).astype("timedelta64[us]")
    day = stamp.astype("datetime64[D]")
    if name == "time_of_day":
        return (stamp - day) / np.timedelta64(1, "h")
    dow = (day.astype(np.int64) + 3) % 7
    if name == "day_of_week":
        return dow.astype(float)
    return (dow < 5).astype(float)


# ------------------------------------------------- single-query definitions


def _prefix(h, t):
    return h.arrays(t)


def indicator_stat(h, s, r, t):
    """1 if some event s->r happened strictly before t."""
    ss, rr, _, _ = _prefix(h, t)
    return int(np.any((ss == s) & (rr == r)))


def volume_stat(h, s, r, t):
    """Weighted number of s->r events strictly before t."""
    ss, rr, _, ww = _prefix(h, t)
    return float(ww[(ss == s) & (rr == r)].sum())


def exp_decay_stat(h, s, r, t, half_life):
    """Sum over prior s->r events of (ln2/T) exp(-(t - t_i) ln2 / T)."""
    if not half_life > 0:
        raise StatisticError("half-life must be positive")
    if h.seq.order_only:
        raise OrderOnlyError("exp_decay needs real timestamps; sequence is order-only")
    ss, rr, tt, ww = _prefix(h, t)
    sel = (ss == s) & (rr == r)
    k = math.log(2.0) / half_life
    return float(np.sum(ww[sel] * k * np.exp(-(t - tt[sel]) * k)))


def temporal_stat(t, t_last):
    """1 - exp(-(t - t_last)); exactly 1 when there is no prior event."""
    if t_last is None:
        return 1.0
    if t < t_last:
        raise StatisticError("query time precedes the anchoring event")
    return 1.0 - math.exp(-(t - t_last))


# ------------------------------------------------------------- hyperevents


@dataclass(frozen=True)
class HyperEvent:
    time: float
    senders: frozenset
    receivers: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "senders", frozenset(self.senders))
        object.__setattr__(self, "receivers", frozenset(self.receivers))
        if not self.senders:
            raise StatisticError("hyperevent needs at least one sender")


def subrepetition(history, S, R, rho, omega, t):
    """Average prior count of (rho-subset of S) -> (omega-subset of R) hyperevents.

    A prior hyperevent (S_i, R_i) contributes comb(|S & S_i|, rho) *
    comb(|R & R_i|, omega) subset pairs, so no enumeration is needed.
    """
    S, R = frozenset(S), frozenset(R)
    if not 1 <= rho <= len(S):
        raise StatisticError(f"rho={rho} out of range for |S|={len(S)}")
    if not 0 <= omega <= len(R) or (omega == 0 and R):
        raise StatisticError(f"omega={omega} out of range for |R|={len(R)}")
    total = 0
    for ev in history:
        if ev.time >= t:
            continue
        total += comb(len(S & ev.senders), rho) * comb(len(R & ev.receivers), omega)
    return total / (comb(len(S), rho) * comb(len(R), omega))


def subrepetition_naive(history, S, R, rho, omega, t):
    """Literal subset enumeration; exponential, for checking only."""
    S, R = sorted(S), sorted(R)
    subs = list(combinations(S, rho))
    recs = list(combinations(R, omega))
    acc = 0
    for s_ in subs:
        for r_ in recs:
            acc += sum(1 for ev in history if ev.time < t
                       and set(s_) <= ev.senders and set(r_) <= ev.receivers)
    return acc / (len(subs) * len(recs))


# ---------------------------------------------------------- column compute


def _check_spec(spec, seq):
    if seq.order_only and spec.time_dependent:
        raise OrderOnlyError(f"{spec.name}: {spec.block if spec.block in ('exp_decay', 'temporal') else spec.mechanism} "
                             "needs real timestamps; sequence is order-only")
    if seq.mode == "bipartite" and spec.mechanism in _TWO_MODE_REFUSED:
        raise StatisticError(f"{spec.name}: {spec.mechanism} cannot be evaluated on a bipartite network")


def compute_column(spec, history, rows_s, rows_r, rows_t, row_types=None):
    return compute_columns([spec], history, rows_s, rows_r, rows_t, row_types)[spec.name]


def compute_columns(specs, history, rows_s, rows_r, rows_t, row_types=None):
    """Evaluate several statistics on rows (s, r, t).

    Endogenous mechanisms go through one incremental sweep per closure cap,
    costing O(n_events + n_rows) updates plus O(N) per event for closure.
    Returns {name: CovariateColumn}.
    """
    seq = history.seq
    rows_s = np.asarray(rows_s, dtype=np.int64)
    rows_r = np.asarray(rows_r, dtype=np.int64)
    rows_t = np.broadcast_to(np.asarray(rows_t, dtype=float), rows_s.shape).copy()
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise StatisticError("duplicate statistic names")
    for spec in specs:
        _check_spec(spec, seq)
    if np.any(rows_t > history.cutoff):
        raise StatisticError("rows queried beyond the history cutoff")
    out = {}
    swept = [s for s in specs if s.mechanism in _MECH_CODE or s.mechanism == "distance_to_last"]
    plain = [s for s in swept if not s.params.get("same_type")]
    typed = [s for s in swept if s.params.get("same_type")]
    out.update(_sweep_specs(plain, history, rows_s, rows_r, rows_t, None))
    if typed:
        if row_types is None or seq.types is None:
            raise StatisticError("same_type statistics need event types and row types")
        row_types = np.asarray(row_types)
        vals = {s.name: np.empty(len(rows_s)) for s in typed}
        for c in np.unique(row_types):
            sel = np.nonzero(row_types == c)[0]
            part = _sweep_specs(typed, history, rows_s[sel], rows_r[sel], rows_t[sel], c)
            for k, v in part.items():
                vals[k][sel] = v
        out.update(vals)
    for spec in specs:
        if spec.name in out:
            continue
        m = spec.mechanism
        if m == "exogenous_node":
            out[spec.name] = _exo_node(spec, history, seq, rows_s, rows_r, rows_t)
        elif m == "exogenous_dyad":
            pairs = [(seq.sender_nodes[a], seq.receiver_nodes[b]) for a, b in zip(rows_s, rows_r)]
            out[spec.name] = _exo_tables(history, spec).dyad_values(
                spec.params["table"], pairs, rows_t, spec.params.get("default"))
        elif m == "exogenous_global":
            if "transform" in spec.params:
                out[spec.name] = global_transform(spec.params["transform"], rows_t,
                                                  spec.params.get("origin", seq.calendar_origin))
            else:
                out[spec.name] = _exo_tables(history, spec).global_values(spec.params["table"], rows_t)
        elif m == "custom":
            out[spec.name] = _custom(spec, history, rows_s, rows_r, rows_t)
    return {s.name: CovariateColumn(s, out[s.name]) for s in specs}


def _exo_tables(history, spec):
    if history.exogenous is None:
        raise StatisticError(f"{spec.name}: no exogenous tables loaded")
    if "table" not in spec.params and spec.mechanism != "exogenous_global":
        raise StatisticError(f"{spec.name}: params need a 'table'")
    return history.exogenous


def _exo_node(spec, history, seq, rows_s, rows_r, rows_t):
    tables = _exo_tables(history, spec)
    role = spec.params.get("role", "sender")
    name = spec.params["table"]
    if role == "sender":
        return tables.node_values(name, [seq.sender_nodes[a] for a in rows_s], rows_t)
    rv = tables.node_values(name, [seq.receiver_nodes[b] for b in rows_r], rows_t)
    if role == "receiver":
        return rv
    sv = tables.node_values(name, [seq.sender_nodes[a] for a in rows_s], rows_t)
    if role == "diff":
        return sv - rv
    if role == "absdiff":
        return np.abs(sv - rv)
    raise StatisticError(f"{spec.name}: unknown role {role!r}")


def _sweep_specs(specs, history, rows_s, rows_r, rows_t, type_code):
    if not specs:
        return {}
    seq = history.seq
    ev_s, ev_r, ev_t, ev_w = history.arrays()
    if type_code is not None:
        keep = seq.types[:len(ev_t)] == type_code
        ev_s, ev_r, ev_t, ev_w = ev_s[keep], ev_r[keep], ev_t[keep], ev_w[keep]
    order = np.argsort(rows_t, kind="stable")
    qs, qr, qt = rows_s[order], rows_r[order], rows_t[order]
    halflives = sorted({s.half_life for s in specs if s.block == "exp_decay"})
    groups = {}
    for s in specs:
        cap = math.inf
        if s.mechanism in ("transitive_closure", "cyclic_closure"):
            cap = 1.0 if s.params.get("variant") == "indicator" else float(s.params.get("cap", math.inf))
        groups.setdefault(cap, []).append(s)
    out = {}
    for cap, group in groups.items():
        closure = any(s.mechanism in ("transitive_closure", "cyclic_closure") for s in group)
        mech, block, hl = [], [], []
        for s in group:
            if s.mechanism == "distance_to_last":
                mech.append(F.LAST_RECEIVER)
                block.append(F.VOLUME)
            else:
                mech.append(_MECH_CODE[s.mechanism])
                block.append(_BLOCK_CODE[s.block])
            hl.append(halflives.index(s.half_life) if s.block == "exp_decay" else 0)
        vals = kernels.sweep(ev_s, ev_r, ev_t, ev_w, seq.n_senders, seq.n_receivers,
                             qs, qr, qt, mech, block, hl, halflives, cap, closure)
        for j, s in enumerate(group):
            v = np.empty(len(rows_s))
            v[order] = vals[:, j]
            if s.mechanism == "distance_to_last":
                v = _distance_values(s, history, rows_r, v.astype(np.int64))
            out[s.name] = v
    return out


def _distance_values(spec, history, rows_r, last):
    seq = history.seq
    tables = _exo_tables(history, spec)
    D = tables.dyad_matrix(spec.params["table"], seq.receiver_nodes, seq.receiver_nodes)
    np.fill_diagonal(D, np.where(np.isnan(np.diag(D)), 0.0, np.diag(D)))
    missing = float(spec.params.get("missing", 0.0))
    out = np.full(len(rows_r), missing)
    has = last >= 0
    d = D[rows_r[has], last[has]]
    if np.any(np.isnan(d)):
        k = int(np.argmax(np.isnan(d)))
        a = seq.receiver_nodes[rows_r[has][k]]
        b = seq.receiver_nodes[last[has][k]]
        raise StatisticError(f"{spec.name}: no distance for dyad {a!r}->{b!r}")
    if np.any(d < 0):
        raise StatisticError(f"{spec.name}: negative distance")
    out[has] = np.log(d + 1.0)
    return out


def _custom(spec, history, rows_s, rows_r, rows_t):
    pred = spec.params.get("predicate")
    if not callable(pred):
        raise StatisticError(f"{spec.name}: custom mechanism needs a callable 'predicate'")
    ev_s, ev_r, ev_t, ev_w = history.arrays()
    k = math.log(2.0) / spec.half_life if spec.block == "exp_decay" else 0.0
    out = np.empty(len(rows_s))
    for i, (s, r, t) in enumerate(zip(rows_s, rows_r, rows_t)):
        stop = int(np.searchsorted(ev_t, t, side="left"))
        hit = np.array([bool(pred((ev_s[j], ev_r[j], ev_t[j]), (s, r, t))) for j in range(stop)],
                       dtype=bool)
        if spec.block == "volume":
            out[i] = ev_w[:stop][hit].sum()
        elif spec.block == "indicator":
            out[i] = float(hit.any())
        elif spec.block == "temporal":
            out[i] = temporal_stat(t, ev_t[:stop][hit][-1] if hit.any() else None)
        else:
            out[i] = np.sum(ev_w[:stop][hit] * k * np.exp(-(t - ev_t[:stop][hit]) * k))
    return out
