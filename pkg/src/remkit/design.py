"""Observation rows and model matrices.

Three layouts share one representation: rows are partitioned into
consecutive *units* (one per event) by ``offsets``.

- grouped: each unit is a risk set (full or sampled); ``case_rows`` marks
  the observed dyad.  Used by the partial and sampled partial likelihoods.
- poisson: each unit is the inter-event interval ending at an event; rows
  carry the event indicator and the log exposure offset.
- paired: case-control differences, one row per sampled control.
"""

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import BSplineSmooth, ThinPlateSmooth, TimeVaryingBasis
from .errors import InputError, RankDeficiencyError
from .events import History
from .sampling import CaseControlData
from .stats import compute_columns

INTERCEPT = "(Intercept)"


@dataclass
class Observations:
    """Dyad-time rows with their covariate values, grouped by event."""

    kind: str
    seq: object
    s: np.ndarray
    r: np.ndarray
    t: np.ndarray
    values: dict
    offsets: np.ndarray
    case_rows: np.ndarray
    event_index: np.ndarray
    y: np.ndarray = None
    log_exposure: np.ndarray = None
    row_types: np.ndarray = None

    def __len__(self):
        return len(self.s)


def _stack_units(seq, per_event, specs, exogenous, kind, strata=False):
    s_parts, r_parts, t_parts, case_rows, offsets, ev = [], [], [], [], [0], []
    for i, (ds, dr, case_pos) in per_event:
        s_parts.append(ds)
        r_parts.append(dr)
        t_parts.append(np.full(len(ds), seq.times[i]))
        case_rows.append(offsets[-1] + case_pos)
        offsets.append(offsets[-1] + len(ds))
        ev.append(i)
    s = np.concatenate(s_parts)
    r = np.concatenate(r_parts)
    t = np.concatenate(t_parts)
    offsets = np.asarray(offsets, dtype=np.int64)
    ev = np.asarray(ev, dtype=np.int64)
    row_types = None
    if strata:
        if seq.types is None:
            raise InputError("strata need event types")
        row_types = np.repeat(seq.types[ev], np.diff(offsets))
    cols = compute_columns(specs, History(seq, exogenous), s, r, t, row_types)
    values = {k: c.values for k, c in cols.items()}
    return Observations(kind, seq, s, r, t, values, offsets, np.asarray(case_rows, np.int64),
                        ev, row_types=row_types)


def full_risk_observations(seq, rst, specs, exogenous=None, events=None, strata=False):
    """Every at-risk dyad at every event time (the case included)."""
    idx = range(len(seq)) if events is None else events

    def gen():
        static = None if rst.time_varying else rst.dyads_at(seq.times[0])
        for i in idx:
            ds, dr = static if static is not None else rst.dyads_at(seq.times[i])
            hit = np.nonzero((ds == seq.senders[i]) & (dr == seq.receivers[i]))[0]
            if len(hit) != 1:
                raise InputError(f"event {i} is not in its risk set")
            yield i, (ds, dr, int(hit[0]))

    return _stack_units(seq, gen(), specs, exogenous, "grouped", strata)


def sampled_observations(seq, sampled, specs, exogenous=None, strata=False):
    """Case followed by its sampled controls, per event."""
    def gen():
        for srs in sampled:
            ds = np.r_[srs.case[0], srs.controls[:, 0]].astype(np.int64)
            dr = np.r_[srs.case[1], srs.controls[:, 1]].astype(np.int64)
            yield srs.event_index, (ds, dr, 0)

    return _stack_units(seq, gen(), specs, exogenous, "grouped", strata)


def poisson_observations(seq, rst, specs, exogenous=None):
    """Full risk-set rows with event indicator and log inter-arrival exposure.

    The first interval starts at the window start.
    """
    obs = full_risk_observations(seq, rst, specs, exogenous)
    prev = np.r_[seq.time_window[0], seq.times[:-1]]
    gaps = seq.times - prev
    if np.any(gaps <= 0):
        i = int(np.argmax(gaps <= 0))
        raise InputError(f"event {i}: zero inter-arrival time; Poisson likelihood undefined")
    y = np.zeros(len(obs))
    y[obs.case_rows] = 1.0
    obs.kind = "poisson"
    obs.y = y
    obs.log_exposure = np.repeat(np.log(gaps[obs.event_index]), np.diff(obs.offsets))
    return obs


@dataclass
class Block:
    label: str
    term: object
    cols: slice
    penalty: np.ndarray = None
    nu_fixed: float = None
    null_dim: int = 0
    basis: object = None
    levels: list = None

    @property
    def size(self):
        return self.cols.stop - self.cols.start

    @property
    def penalized(self):
        return self.penalty is not None


@dataclass
class ModelMatrix:
    kind: str
    X: np.ndarray
    blocks: list
    offsets: np.ndarray
    column_names: list
    case_rows: np.ndarray = None
    y: np.ndarray = None
    offset: np.ndarray = None
    event_index: np.ndarray = None
    centering: dict = field(default_factory=dict)
    spec: object = None

    @property
    def n_units(self):
        return len(self.offsets) - 1

    @property
    def n_params(self):
        return self.X.shape[1]

    def block(self, label):
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def subset(self, units):
        """Model matrix restricted to the given units (kept in the given order)."""
        units = np.asarray(units, dtype=np.int64)
        starts, stops = self.offsets[units], self.offsets[units + 1]
        sizes = stops - starts
        rows = np.concatenate([np.arange(a, b) for a, b in zip(starts, stops)]) if len(units) else \
            np.empty(0, np.int64)
        offsets = np.r_[0, np.cumsum(sizes)].astype(np.int64)
        case_rows = None
        if self.case_rows is not None:
            case_rows = offsets[:-1] + (self.case_rows[units] - starts)
        return ModelMatrix(self.kind, self.X[rows], self.blocks, offsets, self.column_names,
                           case_rows, None if self.y is None else self.y[rows],
                           None if self.offset is None else self.offset[rows],
                           None if self.event_index is None else self.event_index[units],
                           self.centering, self.spec)

    def to_csv(self, path_or_buf):
        own = isinstance(path_or_buf, (str, os.PathLike))
        fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
        unit = np.repeat(np.arange(self.n_units), np.diff(self.offsets))
        try:
            w = csv.writer(fh, lineterminator="\n")
            extra = []
            if self.kind == "grouped":
                extra = ["case"]
            elif self.kind == "poisson":
                extra = ["y", "offset"]
            w.writerow(["unit"] + extra + list(self.column_names))
            is_case = np.zeros(len(self.X), dtype=int)
            if self.case_rows is not None:
                is_case[self.case_rows] = 1
            for i in range(len(self.X)):
                row = [int(unit[i])]
                if self.kind == "grouped":
                    row.append(int(is_case[i]))
                elif self.kind == "poisson":
                    row += [repr(float(self.y[i])), repr(float(self.offset[i]))]
                w.writerow(row + [repr(float(v)) for v in self.X[i]])
        finally:
            if own:
                fh.close()


def _factor_codes(term, s, r, seq, factors):
    if term.var == "sender":
        return s, list(seq.sender_nodes)
    if term.var == "receiver":
        return r, list(seq.receiver_nodes)
    if factors is None or term.var not in factors:
        raise InputError(f"unknown grouping factor {term.var!r}")
    role, mapping = factors[term.var]
    nodes = seq.sender_nodes if role == "sender" else seq.receiver_nodes
    codes_src = s if role == "sender" else r
    levels = sorted({mapping[n] for n in nodes if n in mapping})
    li = {v: k for k, v in enumerate(levels)}
    node_level = np.array([li.get(mapping.get(n), -1) for n in nodes])
    codes = node_level[codes_src]
    if np.any(codes < 0):
        raise InputError(f"factor {term.var!r} misses some nodes")
    return codes, levels


def _hierarchy_warning(spec, stat_specs):
    if not stat_specs:
        return
    mech = {t.var: stat_specs[t.var].mechanism for t in spec.terms
            if t.kind != "re" and t.var in stat_specs}
    triadic = [v for v, m in mech.items() if m in ("transitive_closure", "cyclic_closure")]
    lower = [v for v, m in mech.items() if m in ("repetition", "reciprocity", "sender_activity",
                                                  "receiver_popularity")]
    if triadic and not lower:
        warnings.warn(f"triadic term(s) {triadic} without dyadic or degree terms; "
                      "their effect may absorb lower-order structure")


def build_model_matrix(spec, data, stat_specs=None, bases=None, factors=None, window=None):
    """Assemble the model matrix for ``spec`` from observation rows.

    ``data`` is an :class:`Observations` (grouped or poisson) or a
    :class:`~remkit.sampling.CaseControlData` (paired).  Smooth bases are
    fitted on the pooled values of all rows (cases and controls) unless
    ``bases`` (label -> fitted basis) is given.  Penalized blocks are
    centred on the pooled rows; linear blocks are left as they are.
    """
    _hierarchy_warning(spec, stat_specs)
    paired = isinstance(data, CaseControlData)
    seq = data.seq
    if window is None:
        window = seq.time_window
    if paired:
        n = len(data)
        vals = {k: np.r_[data.case_values[k], data.ctrl_values[k]] for k in data.case_values}
        S = np.r_[data.case_s, data.ctrl_s]
        R = np.r_[data.case_r, data.ctrl_r]
        T = np.r_[data.case_t, data.ctrl_t]
        ev = data.event_index
        if np.any(np.diff(ev) < 0):
            raise InputError("case-control rows must be ordered by event")
        cuts = np.r_[0, np.nonzero(np.diff(ev))[0] + 1, n]
        offsets = cuts.astype(np.int64)
        unit_event = ev[cuts[:-1]]
    else:
        vals, S, R, T = data.values, data.s, data.r, data.t
        offsets = data.offsets
        unit_event = data.event_index
    bases = {} if bases is None else dict(bases)
    pieces, blocks, names = [], [], []
    centering = {}
    col = 0
    for term in spec.terms:
        if term.kind != "re" and term.var not in vals:
            raise InputError(f"term {term.label}: statistic {term.var!r} was not computed")
        levels = None
        if term.kind == "linear":
            M = vals[term.var][:, None].astype(float)
            basis = None
            penalty = None
            cnames = [term.var]
        elif term.kind == "nle":
            basis = bases.get(term.label)
            if basis is None:
                basis = (BSplineSmooth(term.k) if term.basis == "bs" else ThinPlateSmooth(term.k))
                basis.fit(vals[term.var])
            M = basis.transform(vals[term.var], quiet=True)
            penalty = basis.penalty
            cnames = [f"{term.label}.{j + 1}" for j in range(M.shape[1])]
        elif term.kind == "tve":
            basis = bases.get(term.label) or TimeVaryingBasis(term.k, window)
            M = basis.transform(vals[term.var], T)
            penalty = basis.penalty
            cnames = [f"{term.label}.{j + 1}" for j in range(M.shape[1])]
        else:
            codes, levels = _factor_codes(term, S, R, seq, factors)
            M = np.zeros((len(codes), len(levels)))
            M[np.arange(len(codes)), codes] = 1.0
            basis = None
            penalty = np.eye(len(levels))
            cnames = [f"{term.label}[{lv}]" for lv in levels]
        if term.kind != "linear":
            if term.label in bases and hasattr(bases[term.label], "center"):
                center = bases[term.label].center
            else:
                center = M.mean(axis=0)
            if basis is not None:
                basis.center = center
            M = M - center
            centering[term.label] = center
        if paired:
            M = M[:n] - M[n:]
        nu_fixed = None
        if term.kind == "re" and term.sigma2 is not None:
            nu_fixed = 1.0 / (2.0 * term.sigma2)
        null_dim = 0 if penalty is None else int(getattr(basis, "null_dim", 0) or 0)
        k = M.shape[1]
        blocks.append(Block(term.label, term, slice(col, col + k), penalty, nu_fixed, null_dim,
                            basis, levels))
        names += cnames
        pieces.append(M)
        col += k
    kind = "paired" if paired else data.kind
    if kind == "poisson":
        pieces.insert(0, np.ones((len(S), 1)))
        for b in blocks:
            b.cols = slice(b.cols.start + 1, b.cols.stop + 1)
        blocks.insert(0, Block(INTERCEPT, None, slice(0, 1)))
        names.insert(0, INTERCEPT)
    X = np.ascontiguousarray(np.hstack(pieces)) if pieces else np.zeros((len(S), 0))
    mm = ModelMatrix(kind, X, blocks, np.asarray(offsets, np.int64), names,
                     None if paired else data.case_rows,
                     data.y if kind == "poisson" else None,
                     data.log_exposure if kind == "poisson" else None,
                     unit_event, centering, spec)
    check_identifiable(mm, stat_specs)
    return mm


def _identifying_rows(mm):
    """Rows whose span determines identifiability under the likelihood."""
    X = mm.X
    if mm.kind == "grouped":
        sizes = np.diff(mm.offsets)
        means = np.add.reduceat(X, mm.offsets[:-1], axis=0) / sizes[:, None]
        return X - np.repeat(means, sizes, axis=0)
    return X


def check_identifiable(mm, stat_specs=None):
    """Raise RankDeficiencyError naming the first unidentifiable term.

    A block is unidentifiable when some direction both leaves the
    likelihood unchanged and lies in the penalty's null space.  An all-zero
    block gets a dedicated message.
    """
    Xc = _identifying_rows(mm)
    G = Xc.T @ Xc
    scale = max(1.0, float(np.max(np.abs(np.diag(G))))) if G.size else 1.0
    free_cols = []
    for b in mm.blocks:
        idx = np.arange(b.cols.start, b.cols.stop)
        Gb = G[np.ix_(idx, idx)]
        if not np.any(np.abs(Xc[:, idx]) > 1e-12 * max(1.0, np.abs(mm.X[:, idx]).max(initial=0.0))):
            hint = ""
            glob = (stat_specs and b.term is not None and b.term.kind != "re"
                    and b.term.var in stat_specs
                    and stat_specs[b.term.var].mechanism == "exogenous_global")
            if glob or mm.kind == "paired":
                hint = ("; global covariates cancel in unshifted case-control differences, "
                        "use the shifted case-control design")
            if mm.kind == "grouped":
                hint = "; the covariate is constant within every risk set" + (
                    ", use the shifted case-control design" if glob else "")
            raise RankDeficiencyError(f"term {b.label}: all-zero block after differencing{hint}")
        if b.penalized:
            w, V = np.linalg.eigh(b.penalty)
            N = V[:, w < 1e-9 * max(1.0, w.max())]
        else:
            N = np.eye(len(idx))
            free_cols.extend(idx.tolist())
        if N.shape[1] == 0:
            continue
        red = N.T @ Gb @ N
        if np.linalg.eigvalsh(red).min() <= 1e-10 * scale:
            raise RankDeficiencyError(f"term {b.label}: rank-deficient block")
    if free_cols:
        Gf = G[np.ix_(free_cols, free_cols)]
        if np.linalg.eigvalsh(Gf).min() <= 1e-10 * scale:
            names = [mm.column_names[c] for c in free_cols]
            raise RankDeficiencyError(f"unpenalized columns {names} are collinear")
