"""Nested case-control sampling and the shifted counting process."""

import csv
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import OrderOnlyError, SamplingError
from .events import History
from .stats import compute_columns

MAX_ATTEMPTS = 100


def as_rng(rng):
    """(Generator, seed record) from a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), rng


@dataclass
class SampledRiskSet:
    event_index: int
    case: tuple
    controls: np.ndarray  # shape (k, 2): sender, receiver codes
    seed: object = None


def sample_controls(rst, seq, m, rng=None, events=None):
    """Draw m controls per event uniformly without replacement from R_{t_i} minus the case."""
    if m < 1:
        raise SamplingError("m must be at least 1")
    gen, seed = as_rng(rng)
    idx = range(len(seq)) if events is None else events
    out = []
    short = 0
    for i in idx:
        s, r, t = int(seq.senders[i]), int(seq.receivers[i]), seq.times[i]
        cs, cr = rst.sample(t, m, (s, r), gen)
        if len(cs) == 0:
            raise SamplingError(f"event {i}: risk set holds only the case; use the full likelihood")
        if len(cs) < m:
            short += 1
        out.append(SampledRiskSet(int(i), (s, r), np.column_stack([cs, cr]), seed))
    if short:
        warnings.warn(f"{short} events had fewer than m={m} available controls")
    return out


@dataclass
class ShiftTable:
    """Per-dyad positive time shifts tau, drawn independently of the events."""

    tau: np.ndarray
    horizon: float
    seed: object = None
    distribution: str = "uniform"

    @property
    def degenerate(self):
        return not np.any(self.tau)

    def shifted_time(self, s, r, t):
        return t + self.tau[s, r]

    def in_shifted_risk(self, rst, s, r, t_shift):
        """Dyad at risk at shifted time t_shift: its original clock t_shift - tau is live."""
        t0, t1 = rst.seq.time_window
        t_orig = t_shift - self.tau[s, r]
        if t_orig < t0 or t_orig > t1:
            return False
        return bool(rst.at_risk(s, r, t_orig))


def draw_shifts(shape, distribution="uniform", c=None, rng=None, T=None):
    """One shift per dyad of a (n_senders, n_receivers) grid.

    ``distribution`` is "uniform" (on (0, c), default c = T/10) or "zero".
    """
    gen, seed = as_rng(rng)
    if distribution == "zero":
        tau = np.zeros(shape)
    elif distribution == "uniform":
        if c is None:
            if T is None:
                raise SamplingError("uniform shifts need c or the horizon T")
            c = T / 10.0
        if not c > 0:
            raise SamplingError("uniform shift bound c must be positive")
        tau = gen.uniform(0.0, c, size=shape)
        tau[tau == 0] = np.nextafter(0.0, 1.0)
    else:
        raise SamplingError(f"unknown shift distribution {distribution!r}")
    T = 0.0 if T is None else float(T)
    return ShiftTable(tau, T + float(tau.max(initial=0.0)), seed, distribution)


@dataclass
class CaseControlRow:
    event_index: int
    case: tuple
    case_time: float
    control: tuple
    control_time: float
    case_values: dict
    control_values: dict

    @property
    def delta(self):
        return {k: self.case_values[k] - self.control_values[k] for k in self.case_values}


class CaseControlData:
    """Case-control rows held column-wise; iterating yields CaseControlRow."""

    def __init__(self, seq, specs, event_index, case_s, case_r, case_t, ctrl_s, ctrl_r, ctrl_t,
                 case_values, ctrl_values, shifted, dropped=0, seed=None):
        self.seq = seq
        self.specs = list(specs)
        self.event_index = np.asarray(event_index, dtype=np.int64)
        self.case_s, self.case_r = np.asarray(case_s, np.int64), np.asarray(case_r, np.int64)
        self.case_t = np.asarray(case_t, float)
        self.ctrl_s, self.ctrl_r = np.asarray(ctrl_s, np.int64), np.asarray(ctrl_r, np.int64)
        self.ctrl_t = np.asarray(ctrl_t, float)
        self.case_values = case_values
        self.ctrl_values = ctrl_values
        self.shifted = shifted
        self.dropped = dropped
        self.seed = seed

    def __len__(self):
        return len(self.event_index)

    def __getitem__(self, k):
        return CaseControlRow(
            int(self.event_index[k]), (int(self.case_s[k]), int(self.case_r[k])),
            float(self.case_t[k]), (int(self.ctrl_s[k]), int(self.ctrl_r[k])),
            float(self.ctrl_t[k]),
            {n: float(v[k]) for n, v in self.case_values.items()},
            {n: float(v[k]) for n, v in self.ctrl_values.items()})

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    def delta(self, name):
        return self.case_values[name] - self.ctrl_values[name]

    def to_csv(self, path_or_buf):
        seq = self.seq
        names = [s.name for s in self.specs]
        header = ["time", "sender_ev", "receiver_ev", "sender_nv", "receiver_nv"]
        if self.shifted:
            header.append("time_nv")
        for n in names:
            header += [f"{n}_ev", f"{n}_nv", f"{n}_delta"]
        header.append("y")
        own = isinstance(path_or_buf, (str, os.PathLike))
        fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(self)):
                row = [repr(float(self.case_t[k])), seq.sender_nodes[self.case_s[k]],
                       seq.receiver_nodes[self.case_r[k]], seq.sender_nodes[self.ctrl_s[k]],
                       seq.receiver_nodes[self.ctrl_r[k]]]
                if self.shifted:
                    row.append(repr(float(self.ctrl_t[k])))
                for n in names:
                    a, b = float(self.case_values[n][k]), float(self.ctrl_values[n][k])
                    row += [repr(a), repr(b), repr(a - b)]
                row.append(1)
                w.writerow(row)
        finally:
            if own:
                fh.close()


def _draw_shifted(rst, shifts, case, t_case, m, gen, full):
    """m distinct controls from the shifted risk set at the case's shifted time."""
    s, r = case
    t_shift = t_case + shifts.tau[s, r]
    ns, nr = rst.static_mask.shape
    picked, seen = [], {case}
    for _ in range(m):
        for _attempt in range(MAX_ATTEMPTS):
            k = int(gen.integers(ns * nr))
            d = (k // nr, k % nr)
            if d in seen:
                continue
            if shifts.in_shifted_risk(rst, d[0], d[1], t_shift):
                seen.add(d)
                picked.append((d[0], d[1], t_shift - shifts.tau[d]))
                break
        else:
            return None
    return picked


def build_case_control(seq, rst, specs, m=1, shifts=None, rng=None, exogenous=None,
                       row_types=None):
    """Case-control dataset: each event paired with m sampled non-events.

    Unshifted: controls from R_{t_i} evaluated at t_i.  Shifted: controls
    from the shifted risk set at t_i + tau_case; a control's covariates use
    the original history before t* = t_i + tau_case - tau_control.  A
    control whose t* leaves the window is redrawn (at most 100 times per
    control); events that still fail are dropped and counted.
    """
    if m < 1:
        raise SamplingError("m must be at least 1")
    shifted = shifts is not None and not shifts.degenerate
    if shifted and seq.order_only:
        raise OrderOnlyError("shifted sampling needs real timestamps; sequence is order-only")
    gen, seed = as_rng(rng)
    ev, cs, cr, ct, ks, kr, kt = [], [], [], [], [], [], []
    dropped = 0
    if not shifted:
        for srs in sample_controls(rst, seq, m, gen):
            i = srs.event_index
            for c_s, c_r in srs.controls:
                ev.append(i)
                cs.append(srs.case[0])
                cr.append(srs.case[1])
                ct.append(seq.times[i])
                ks.append(int(c_s))
                kr.append(int(c_r))
                kt.append(seq.times[i])
    else:
        for i in range(len(seq)):
            case = (int(seq.senders[i]), int(seq.receivers[i]))
            picked = _draw_shifted(rst, shifts, case, seq.times[i], m, gen, None)
            if picked is None:
                dropped += 1
                continue
            for c_s, c_r, t_star in picked:
                ev.append(i)
                cs.append(case[0])
                cr.append(case[1])
                ct.append(seq.times[i])
                ks.append(c_s)
                kr.append(c_r)
                kt.append(t_star)
        if dropped:
            warnings.warn(f"{dropped} events dropped: no valid shifted control in "
                          f"{MAX_ATTEMPTS} attempts")
        if not ev:
            raise SamplingError("every event was dropped during shifted sampling")
    n = len(ev)
    hist = History(seq, exogenous)
    types = None
    if row_types is not None:
        rt = np.asarray(row_types)[np.asarray(ev)]
        types = np.concatenate([rt, rt])
    cols = compute_columns(specs, hist, np.r_[cs, ks], np.r_[cr, kr], np.r_[ct, kt], types)
    case_vals = {k: c.values[:n].copy() for k, c in cols.items()}
    ctrl_vals = {k: c.values[n:].copy() for k, c in cols.items()}
    return CaseControlData(seq, specs, ev, cs, cr, ct, ks, kr, kt, case_vals, ctrl_vals,
                           shifted, dropped, seed)
