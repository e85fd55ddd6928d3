"""Events, node registries, histories and risk sets."""

import csv
import io
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .errors import (DataConsistencyError, EmptySequenceError, InputError,
                     ParseError, SchemaError)

DEFAULT_SCHEMA = {"time": "time", "sender": "sender", "receiver": "receiver",
                  "type": "type", "weight": "weight"}


@dataclass(frozen=True)
class RelationalEvent:
    time: float
    sender: str
    receiver: str
    event_type: object = None
    weight: float = 1.0


class EventSequence:
    """An ordered realisation of a relational event process.

    Nodes are stored as integer codes into ``sender_nodes`` and
    ``receiver_nodes``.  In one-mode sequences both registries are the same
    list.  Timestamps must be strictly increasing.

    Parameters
    ----------
    times, senders, receivers : array_like
        Event times and integer node codes.
    sender_nodes, receiver_nodes : sequence of str
        Node labels.
    mode : {"one-mode", "bipartite"}
    types : array_like of int, optional
        Codes into ``type_levels``.
    weights : array_like, optional
        Event weights, default 1.
    time_window : (float, float), optional
        Observation window; defaults to ``(min(0, t_1), t_n)``.
    order_only : bool
        Timestamps are synthetic ranks; time-dependent statistics are refused.
    calendar_origin : datetime, optional
        Calendar instant of time 0 (time unit: days).
    jitter : dict, optional
        Record of tie-breaking adjustments made at ingestion.
    """

    def __init__(self, times, senders, receivers, sender_nodes, receiver_nodes=None,
                 mode="one-mode", types=None, type_levels=(), weights=None,
                 time_window=None, order_only=False, calendar_origin=None, jitter=None,
                 allow_loops=False):
        self.times = np.asarray(times, dtype=float)
        self.senders = np.asarray(senders, dtype=np.int64)
        self.receivers = np.asarray(receivers, dtype=np.int64)
        n = len(self.times)
        if n == 0:
            raise EmptySequenceError("empty sequence")
        if mode not in ("one-mode", "bipartite"):
            raise InputError(f"unknown mode {mode!r}")
        self.mode = mode
        self.sender_nodes = list(sender_nodes)
        if mode == "one-mode":
            if receiver_nodes is not None and list(receiver_nodes) != self.sender_nodes:
                raise InputError("one-mode sequences need identical sender and receiver registries")
            self.receiver_nodes = self.sender_nodes
        else:
            self.receiver_nodes = list(receiver_nodes)
        self.types = None if types is None else np.asarray(types, dtype=np.int64)
        self.type_levels = list(type_levels)
        self.weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
        self.order_only = bool(order_only)
        self.calendar_origin = calendar_origin
        self.jitter = jitter if jitter is not None else {"epsilon": 0.0, "rows": []}
        self.allow_loops = allow_loops
        if len(self.senders) != n or len(self.receivers) != n or len(self.weights) != n:
            raise InputError("event arrays differ in length")
        if not np.all(np.isfinite(self.times)):
            raise InputError("event times must be finite")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            i = int(np.argmax(np.diff(self.times) <= 0)) + 1
            raise InputError(f"timestamps must be strictly increasing (event {i})")
        if self.senders.min() < 0 or self.senders.max() >= len(self.sender_nodes):
            raise InputError("sender code outside registry")
        if self.receivers.min() < 0 or self.receivers.max() >= len(self.receiver_nodes):
            raise InputError("receiver code outside registry")
        if mode == "one-mode" and not allow_loops and np.any(self.senders == self.receivers):
            i = int(np.argmax(self.senders == self.receivers))
            raise InputError(f"self-loop at event {i} but loops are not allowed")
        if self.types is not None and len(self.types) and (
                self.types.min() < 0 or self.types.max() >= len(self.type_levels)):
            raise InputError("event type outside declared categories")
        if time_window is None:
            time_window = (min(0.0, float(self.times[0])), float(self.times[-1]))
        self.time_window = (float(time_window[0]), float(time_window[1]))
        if self.time_window[0] > self.times[0] or self.time_window[1] < self.times[-1]:
            raise InputError("time window does not cover the events")

    def __len__(self):
        return len(self.times)

    @property
    def n_senders(self):
        return len(self.sender_nodes)

    @property
    def n_receivers(self):
        return len(self.receiver_nodes)

    @property
    def events(self):
        return [self.event(i) for i in range(len(self))]

    def event(self, i):
        c = None if self.types is None else self.type_levels[self.types[i]]
        return RelationalEvent(float(self.times[i]), self.sender_nodes[self.senders[i]],
                               self.receiver_nodes[self.receivers[i]], c,
                               float(self.weights[i]))

    def sender_index(self, label):
        return _lookup(self.sender_nodes, label, "sender")

    def receiver_index(self, label):
        return _lookup(self.receiver_nodes, label, "receiver")

    def subset(self, idx):
        """Sequence of the selected events (indices ascending), same registries."""
        idx = np.asarray(idx)
        return EventSequence(self.times[idx], self.senders[idx], self.receivers[idx],
                             self.sender_nodes,
                             None if self.mode == "one-mode" else self.receiver_nodes,
                             mode=self.mode,
                             types=None if self.types is None else self.types[idx],
                             type_levels=self.type_levels, weights=self.weights[idx],
                             time_window=self.time_window, order_only=self.order_only,
                             calendar_origin=self.calendar_origin,
                             allow_loops=self.allow_loops)

    def to_csv(self, path_or_buf, float_format="%.12g"):
        rows = []
        for i in range(len(self)):
            row = [float_format % self.times[i], self.sender_nodes[self.senders[i]],
                   self.receiver_nodes[self.receivers[i]]]
            if self.types is not None:
                row.append(self.type_levels[self.types[i]])
            if not np.all(self.weights == 1.0):
                row.append(float_format % self.weights[i])
            rows.append(row)
        header = ["time", "sender", "receiver"]
        if self.types is not None:
            header.append("type")
        if not np.all(self.weights == 1.0):
            header.append("weight")
        own = isinstance(path_or_buf, (str, os.PathLike))
        fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        finally:
            if own:
                fh.close()


def _lookup(nodes, label, what):
    try:
        return nodes.index(label)
    except ValueError:
        raise InputError(f"unknown {what} node {label!r}") from None


def _parse_time(text, lineno):
    text = text.strip()
    try:
        return float(text), False
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(text), True
    except ValueError:
        raise ParseError(f"line {lineno}: cannot parse timestamp {text!r}") from None


def break_ties(times):
    """Strictly increasing copy of sorted ``times`` plus a jitter record.

    The k-th row of a run of equal stamps gets k * eps added, eps being 1e-9
    times the median positive gap, shrunk if needed so the largest offset
    stays below half the smallest positive gap.
    """
    times = np.array(times, dtype=float)
    gaps = np.diff(times)
    pos = gaps[gaps > 0]
    eps = 1e-9 * (np.median(pos) if len(pos) else max(1.0, abs(times[0]) if len(times) else 1.0))
    ks = np.zeros(len(times), dtype=np.int64)
    for i in range(1, len(times)):
        if times[i] == times[i - 1]:
            ks[i] = ks[i - 1] + 1
    if ks.max(initial=0) == 0:
        return times, {"epsilon": 0.0, "rows": []}
    if len(pos):
        limit = 0.5 * pos.min()
        if ks.max() * eps >= limit:
            eps = limit / (ks.max() + 1)
    out = times + ks * eps
    # eps can vanish in floating point next to large stamps
    for i in range(1, len(out)):
        if out[i] <= out[i - 1]:
            out[i] = np.nextafter(out[i - 1], np.inf)
    rows = [(int(i), int(ks[i])) for i in np.nonzero(ks)[0]]
    return out, {"epsilon": float(eps), "rows": rows}


def parse_event_stream(source, schema=None, delimiter=",", mode="one-mode",
                       order_only=False, allow_loops=False, type_levels=None,
                       calendar_origin=None):
    """Read a delimited event file into an :class:`EventSequence`.

    Parameters
    ----------
    source : path, file object or str
        A path, an open text handle, or CSV text.
    schema : dict, optional
        Maps the logical columns ``time``, ``sender``, ``receiver`` and the
        optional ``type``, ``weight`` to column names in the header.
    order_only : bool
        Only the order of events is meaningful.  Timestamps become 1..n; the
        time column, if present, is used for sorting only.
    calendar_origin : datetime, optional
        For numeric stamps measured in days, the calendar instant of t=0.

    Numeric stamps are kept as given.  ISO stamps become days since midnight
    of the first event's date, and that midnight is the calendar origin.
    """
    mapping = dict(DEFAULT_SCHEMA)
    if schema:
        mapping.update(schema)
    text = _read_source(source)
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptySequenceError("empty sequence (no header)") from None
    col = {}
    for key in ("time", "sender", "receiver"):
        name = mapping[key]
        if name not in header:
            if key == "time" and order_only:
                continue
            raise SchemaError(f"missing column {name!r} for {key}")
        col[key] = header.index(name)
    for key in ("type", "weight"):
        if mapping.get(key) and mapping[key] in header:
            col[key] = header.index(mapping[key])

    raw_t, snd, rcv, typ, wts, iso_flags = [], [], [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        if "time" in col:
            t, is_iso = _parse_time(row[col["time"]], lineno)
            if not is_iso and not math.isfinite(t):
                raise ParseError(f"line {lineno}: non-finite timestamp")
        else:
            t, is_iso = float(len(raw_t) + 1), False
        raw_t.append(t)
        iso_flags.append(is_iso)
        s, r = row[col["sender"]].strip(), row[col["receiver"]].strip()
        if not s or not r:
            raise ParseError(f"line {lineno}: empty node id")
        if s == r and not allow_loops and mode == "one-mode":
            raise ParseError(f"line {lineno}: self-loop {s}->{r} (loops not allowed)")
        snd.append(s)
        rcv.append(r)
        if "type" in col:
            typ.append(row[col["type"]].strip())
        if "weight" in col:
            try:
                wts.append(float(row[col["weight"]]))
            except ValueError:
                raise ParseError(f"line {lineno}: bad weight {row[col['weight']]!r}") from None
    if not raw_t:
        raise EmptySequenceError("empty sequence")
    if any(iso_flags) and not all(iso_flags):
        raise ParseError("mixed numeric and ISO timestamps")

    origin = calendar_origin
    if all(iso_flags):
        first = min(raw_t)
        if first.tzinfo is not None:
            raw_t = [x.astimezone(first.tzinfo) for x in raw_t]
        origin = datetime(first.year, first.month, first.day, tzinfo=first.tzinfo)
        times = np.array([(x - origin) / timedelta(days=1) for x in raw_t])
    else:
        times = np.array(raw_t, dtype=float)

    order = np.argsort(times, kind="stable")
    times = times[order]
    if order_only:
        times = np.arange(1, len(times) + 1, dtype=float)
        jitter = {"epsilon": 0.0, "rows": []}
        origin = None
    else:
        times, jitter = break_ties(times)
        jitter["rows"] = [(int(order[i]) + 2, k) for i, k in jitter["rows"]]
        if jitter["rows"]:
            warnings.warn(f"{len(jitter['rows'])} tied timestamps broken by input order")

    snd = [snd[i] for i in order]
    rcv = [rcv[i] for i in order]
    if mode == "one-mode":
        nodes = sorted(set(snd) | set(rcv))
        index = {v: k for k, v in enumerate(nodes)}
        s_idx = [index[v] for v in snd]
        r_idx = [index[v] for v in rcv]
        rnodes = None
    elif mode == "bipartite":
        nodes = sorted(set(snd))
        rnodes = sorted(set(rcv))
        si = {v: k for k, v in enumerate(nodes)}
        ri = {v: k for k, v in enumerate(rnodes)}
        s_idx = [si[v] for v in snd]
        r_idx = [ri[v] for v in rcv]
    else:
        raise InputError(f"unknown mode {mode!r}")
    types = None
    levels = ()
    if typ:
        typ = [typ[i] for i in order]
        levels = list(type_levels) if type_levels is not None else sorted(set(typ))
        lidx = {v: k for k, v in enumerate(levels)}
        bad = [v for v in typ if v not in lidx]
        if bad:
            raise ParseError(f"event type {bad[0]!r} not in declared categories")
        types = [lidx[v] for v in typ]
    weights = np.array(wts)[order] if wts else None
    return EventSequence(times, s_idx, r_idx, nodes, rnodes, mode=mode, types=types,
                         type_levels=levels, weights=weights, order_only=order_only,
                         calendar_origin=origin, jitter=jitter, allow_loops=allow_loops)


def _read_source(source):
    if hasattr(source, "read"):
        return source.read()
    if isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source):
        path = os.fspath(source)
        if not os.path.exists(path):
            raise InputError(f"events file not found: {path}")
        with open(path, encoding="utf-8-sig") as fh:
            return fh.read()
    return source


class History:
    """Read-only view of the events strictly before a cutoff.

    ``History(seq)`` sees everything; ``h.before(t)`` narrows the view.  The
    view never exposes an event stamped at or after its cutoff.
    """

    def __init__(self, seq, exogenous=None, cutoff=math.inf):
        self.seq = seq
        self.exogenous = exogenous
        self.cutoff = cutoff
        self._stop = int(np.searchsorted(seq.times, cutoff, side="left"))

    def before(self, t):
        return History(self.seq, self.exogenous, min(self.cutoff, t))

    def __len__(self):
        return self._stop

    def arrays(self, t=math.inf):
        """(senders, receivers, times, weights) of events with time < min(t, cutoff)."""
        stop = self._stop if t >= self.cutoff else int(
            np.searchsorted(self.seq.times, t, side="left"))
        sl = slice(0, stop)
        s = self.seq
        return s.senders[sl], s.receivers[sl], s.times[sl], s.weights[sl]


# ---------------------------------------------------------------- risk sets

POLICIES = {
    "full": "full-crossproduct-no-loops",
    "full-crossproduct-no-loops": "full-crossproduct-no-loops",
    "bipartite": "bipartite-crossproduct",
    "bipartite-crossproduct": "bipartite-crossproduct",
    "non-recurrent": "non-recurrent",
    "exclusion": "explicit-exclusion-list",
    "explicit-exclusion-list": "explicit-exclusion-list",
}


@dataclass
class RiskPolicy:
    """Rules defining which dyads are at risk.

    ``exclusions`` holds (sender, receiver) label pairs that are never at
    risk and is honoured by every kind.  ``node_events`` holds
    (time, node, "enter" | "exit") registry mutations; a mutation at time x
    applies to all t >= x.  A node whose first mutation is an entry is
    inactive before it.
    """

    kind: str = "full-crossproduct-no-loops"
    exclusions: frozenset = field(default_factory=frozenset)
    allow_loops: bool = False
    node_events: tuple = ()

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise InputError(f"unknown risk policy {self.kind!r}")
        self.kind = POLICIES[self.kind]
        self.exclusions = frozenset(tuple(p) for p in self.exclusions)
        for ev in self.node_events:
            if ev[2] not in ("enter", "exit"):
                raise InputError(f"node event action must be enter or exit, got {ev[2]!r}")

    @property
    def non_recurrent(self):
        return self.kind == "non-recurrent"


def load_risk_policy(path):
    """Read a JSON policy: ``{"policy": ..., "exclusions": [[s, r], ...]}``."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"risk policy file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"risk policy {path}: {exc}") from None
    return RiskPolicy(kind=cfg.get("policy", "full-crossproduct-no-loops"),
                      exclusions=frozenset(tuple(p) for p in cfg.get("exclusions", [])),
                      allow_loops=bool(cfg.get("allow_loops", False)),
                      node_events=tuple((float(e["time"]), str(e["node"]), e["action"])
                                        for e in cfg.get("node_events", [])))


class RiskSetTimeline:
    """Time-varying risk set of a sequence under a policy.

    Membership of (s, r) at t: the dyad passes the static mask, both nodes
    are active, and in non-recurrent mode t <= time of the dyad's first
    event.  Nothing is materialised until asked for.
    """

    def __init__(self, seq, policy):
        self.seq = seq
        self.policy = policy
        ns, nr = seq.n_senders, seq.n_receivers
        if policy.kind == "bipartite-crossproduct" and seq.mode != "bipartite":
            raise InputError("bipartite policy on a one-mode sequence")
        if seq.mode == "bipartite" and policy.kind == "full-crossproduct-no-loops":
            raise InputError("one-mode policy on a bipartite sequence")
        mask = np.ones((ns, nr), dtype=bool)
        if seq.mode == "one-mode" and not policy.allow_loops:
            np.fill_diagonal(mask, False)
        for s, r in policy.exclusions:
            if s in seq.sender_nodes and r in seq.receiver_nodes:
                mask[seq.sender_nodes.index(s), seq.receiver_nodes.index(r)] = False
        self.static_mask = mask
        self.first_time = np.full((ns, nr), np.inf)
        if policy.non_recurrent:
            for i in range(len(seq) - 1, -1, -1):
                self.first_time[seq.senders[i], seq.receivers[i]] = seq.times[i]
        self._node_changes = self._activity(policy.node_events)
        self._check()

    def _activity(self, node_events):
        """Per registry: sorted change times and the active masks after each."""
        out = {}
        for role, nodes in (("s", self.seq.sender_nodes), ("r", self.seq.receiver_nodes)):
            active0 = np.ones(len(nodes), dtype=bool)
            evs = sorted((t, nodes.index(n), a) for t, n, a in node_events if n in nodes)
            first = {}
            for t, k, a in evs:
                first.setdefault(k, a)
            for k, a in first.items():
                if a == "enter":
                    active0[k] = False
            times, masks = [], []
            cur = active0.copy()
            for t, k, a in evs:
                cur = cur.copy()
                cur[k] = a == "enter"
                if times and times[-1] == t:
                    masks[-1] = cur
                else:
                    times.append(t)
                    masks.append(cur)
            out[role] = (np.array(times), [active0] + masks)
        return out

    def _active(self, role, t):
        times, masks = self._node_changes[role]
        return masks[int(np.searchsorted(times, t, side="right"))]

    def _check(self):
        seq = self.seq
        for i in range(len(seq)):
            s, r, t = seq.senders[i], seq.receivers[i], seq.times[i]
            if not self.at_risk(s, r, t):
                raise DataConsistencyError(
                    f"event {i} ({seq.sender_nodes[s]}->{seq.receiver_nodes[r]} at t={t:g}) "
                    "is not in its own risk set")

    def mask_at(self, t):
        m = self.static_mask & self._active("s", t)[:, None] & self._active("r", t)[None, :]
        if self.policy.non_recurrent:
            m = m & (t <= self.first_time)
        return m

    def at_risk(self, s, r, t):
        s = np.asarray(s)
        r = np.asarray(r)
        ok = self.static_mask[s, r] & self._active("s", t)[s] & self._active("r", t)[r]
        if self.policy.non_recurrent:
            ok = ok & (t <= self.first_time[s, r])
        return ok

    def dyads_at(self, t):
        """Arrays (senders, receivers) of the risk set at t, row-major order."""
        return np.nonzero(self.mask_at(t))

    def iter_dyads(self, t):
        mask = self.mask_at(t)
        for s in range(mask.shape[0]):
            for r in np.nonzero(mask[s])[0]:
                yield s, int(r)

    def size_at(self, t):
        return int(self.mask_at(t).sum())

    @property
    def time_varying(self):
        return self.policy.non_recurrent or bool(self.policy.node_events)

    def sample(self, t, m, exclude, rng):
        """Draw ``m`` distinct at-risk dyads at t other than ``exclude``.

        Uniform without replacement.  Rejection sampling over the cross
        product while acceptance is high; otherwise enumerate.  If fewer
        than m candidates exist all of them are returned.
        """
        ns, nr = self.static_mask.shape
        es, er = exclude
        mask = None
        if not self.time_varying:
            avail = self._static_count - int(self.static_mask[es, er])
        else:
            mask = self.mask_at(t)
            avail = int(mask.sum()) - int(mask[es, er])
        if avail <= 0:
            return np.empty(0, np.int64), np.empty(0, np.int64)
        if m >= avail or mask is not None or avail < 0.5 * ns * nr:
            if mask is None:
                mask = self.static_mask
            mask = mask.copy()
            mask[es, er] = False
            cand_s, cand_r = np.nonzero(mask)
            if m >= avail:
                return cand_s, cand_r
            pick = rng.choice(len(cand_s), size=m, replace=False)
            return cand_s[pick], cand_r[pick]
        chosen = []
        seen = {(es, er)}
        while len(chosen) < m:
            k = int(rng.integers(ns * nr))
            d = (k // nr, k % nr)
            if d in seen or not self.static_mask[d]:
                continue
            seen.add(d)
            chosen.append(d)
        arr = np.array(chosen, dtype=np.int64)
        return arr[:, 0], arr[:, 1]

    @property
    def _static_count(self):
        if not hasattr(self, "_sc"):
            self._sc = int(self.static_mask.sum())
        return self._sc


def build_risk_set(seq, policy=None):
    """Risk-set timeline for ``seq``; the default policy follows its mode."""
    if policy is None:
        policy = RiskPolicy("bipartite-crossproduct" if seq.mode == "bipartite"
                            else "full-crossproduct-no-loops", allow_loops=seq.allow_loops)
    return RiskSetTimeline(seq, policy)
