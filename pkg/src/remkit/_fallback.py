"""Pure-numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` line for line in semantics; the compiled module
is preferred when it imports.  Everything here must stay importable without a
C toolchain.
"""

import math

import numpy as np

# mechanism codes shared with _kernels.pyx
REPETITION = 0
RECIPROCITY = 1
SENDER_ACTIVITY = 2
RECEIVER_POPULARITY = 3
TRANSITIVE = 4
CYCLIC = 5
LAST_RECEIVER = 6

# building-block codes
INDICATOR = 0
VOLUME = 1
EXP_DECAY = 2
TEMPORAL = 3

LN2 = math.log(2.0)


class NetworkState:
    """Running summary of a dyadic event history.

    Holds dense sender x receiver arrays, so memory is O(|V^S| |V^R|).  Events
    must be applied in non-decreasing time order; queries made after applying
    every event with time < t see exactly the history strictly before t.
    """

    def __init__(self, n_send, n_recv, halflives=(), cap=math.inf, closure=False):
        self.n_send = n_send
        self.n_recv = n_recv
        self.cap = cap
        self.closure = closure
        self.count = np.zeros((n_send, n_recv))
        self.last = np.full((n_send, n_recv), np.nan)
        self.out_count = np.zeros(n_send)
        self.in_count = np.zeros(n_recv)
        self.out_last = np.full(n_send, np.nan)
        self.in_last = np.full(n_recv, np.nan)
        self.last_receiver = np.full(n_send, -1, dtype=np.int64)
        self.halflives = np.asarray(halflives, dtype=float)
        nh = len(self.halflives)
        self.decay = np.zeros((nh, n_send, n_recv))
        self.out_decay = np.zeros((nh, n_send))
        self.in_decay = np.zeros((nh, n_recv))
        if closure:
            if n_send != n_recv:
                raise ValueError("closure statistics need a one-mode network")
            self.capped = np.zeros((n_send, n_recv))
            self.twopath = np.zeros((n_send, n_recv))
            self.anchor = np.full((n_send, n_recv), np.nan)

    def apply(self, s, r, t, w=1.0):
        if self.closure:
            old = self.capped[s, r]
            d = min(self.count[s, r] + w, self.cap) - min(self.count[s, r], self.cap)
            if d > 0:
                row = self.capped[r, :].copy()
                col = self.capped[:, s].copy()
                self.twopath[s, :] += d * row
                self.twopath[:, r] += d * col
                if s == r:
                    self.twopath[s, r] += d * d
                self.capped[s, r] = old + d
            # (s, r) as first leg of s->r->k, then as second leg of k->s->r
            after = self.count[s, r] + w
            nxt = self.count[r, :] > 0
            if s == r and after > 0:
                nxt[r] = True
            self.anchor[s, nxt] = t
            prv = self.count[:, s] > 0
            if s == r and after > 0:
                prv[s] = True
            self.anchor[prv, r] = t
        for h in range(len(self.halflives)):
            k = LN2 / self.halflives[h]
            if not np.isnan(self.last[s, r]):
                self.decay[h, s, r] *= math.exp(-k * (t - self.last[s, r]))
            self.decay[h, s, r] += k * w
            if not np.isnan(self.out_last[s]):
                self.out_decay[h, s] *= math.exp(-k * (t - self.out_last[s]))
            self.out_decay[h, s] += k * w
            if not np.isnan(self.in_last[r]):
                self.in_decay[h, r] *= math.exp(-k * (t - self.in_last[r]))
            self.in_decay[h, r] += k * w
        self.count[s, r] += w
        self.last[s, r] = t
        self.out_count[s] += w
        self.in_count[r] += w
        self.out_last[s] = t
        self.in_last[r] = t
        self.last_receiver[s] = r

    def evaluate(self, mech, block, hl, s, r, t):
        """Vectorised feature values for index arrays ``s, r`` at time ``t``."""
        if mech == LAST_RECEIVER:
            return self.last_receiver[s].astype(float)
        if mech in (REPETITION, RECIPROCITY):
            a, b = (s, r) if mech == REPETITION else (r, s)
            vol, last = self.count[a, b], self.last[a, b]
            dec = self.decay[hl, a, b] if block == EXP_DECAY else None
        elif mech == SENDER_ACTIVITY:
            vol, last = self.out_count[s], self.out_last[s]
            dec = self.out_decay[hl, s] if block == EXP_DECAY else None
        elif mech == RECEIVER_POPULARITY:
            vol, last = self.in_count[r], self.in_last[r]
            dec = self.in_decay[hl, r] if block == EXP_DECAY else None
        elif mech in (TRANSITIVE, CYCLIC):
            a, b = (s, r) if mech == TRANSITIVE else (r, s)
            vol, last = self.twopath[a, b], self.anchor[a, b]
            dec = None
        else:
            raise ValueError(f"unknown mechanism code {mech}")
        if block == VOLUME:
            return vol.astype(float)
        if block == INDICATOR:
            return (vol > 0).astype(float)
        if block == TEMPORAL:
            out = 1.0 - np.exp(-(t - last))
            return np.where(np.isnan(last), 1.0, out)
        if block == EXP_DECAY:
            if dec is None:
                raise ValueError("exponential decay is not defined for closure statistics")
            k = LN2 / self.halflives[hl]
            out = dec * np.exp(-k * (t - last))
            return np.where(np.isnan(last), 0.0, out)
        raise ValueError(f"unknown block code {block}")


def sweep(ev_s, ev_r, ev_t, ev_w, n_send, n_recv, q_s, q_r, q_t,
          mech, block, hl, halflives, cap, closure):
    """Evaluate features for time-sorted queries against a time-sorted event list."""
    n_q = len(q_t)
    n_f = len(mech)
    out = np.empty((n_q, n_f))
    state = NetworkState(n_send, n_recv, halflives, cap, closure)
    n_ev = len(ev_t)
    e = 0
    start = 0
    while start < n_q:
        t = q_t[start]
        stop = start
        while stop < n_q and q_t[stop] == t:
            stop += 1
        while e < n_ev and ev_t[e] < t:
            state.apply(int(ev_s[e]), int(ev_r[e]), float(ev_t[e]), float(ev_w[e]))
            e += 1
        s = q_s[start:stop]
        r = q_r[start:stop]
        for f in range(n_f):
            out[start:stop, f] = state.evaluate(mech[f], block[f], hl[f], s, r, t)
        start = stop
    return out


def grouped_loglik(X, offsets, case_rows, theta, want_hess=True):
    """Sum over groups of log softmax probability of the case row.

    ``offsets`` has length n_groups + 1; rows offsets[g]:offsets[g+1] form
    group g and ``case_rows[g]`` is the absolute row index of its case.
    """
    eta = X @ theta
    starts = offsets[:-1]
    sizes = np.diff(offsets)
    gmax = np.maximum.reduceat(eta, starts)
    w = np.exp(eta - np.repeat(gmax, sizes))
    denom = np.add.reduceat(w, starts)
    value = float(np.sum(eta[case_rows] - gmax - np.log(denom)))
    p = w / np.repeat(denom, sizes)
    xp = X * p[:, None]
    mean = np.add.reduceat(xp, starts, axis=0)
    grad = X[case_rows].sum(axis=0) - mean.sum(axis=0)
    if not want_hess:
        return value, grad, None
    hess = mean.T @ mean - X.T @ xp
    return value, grad, hess


def grouped_expectation(X, offsets, theta):
    """Per-group softmax-weighted mean of the rows of X."""
    eta = X @ theta
    starts = offsets[:-1]
    sizes = np.diff(offsets)
    gmax = np.maximum.reduceat(eta, starts)
    w = np.exp(eta - np.repeat(gmax, sizes))
    denom = np.add.reduceat(w, starts)
    p = w / np.repeat(denom, sizes)
    return np.add.reduceat(X * p[:, None], starts, axis=0)
