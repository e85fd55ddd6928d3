# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_fallback.py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, isnan, NAN, INFINITY

cnp.import_array()

cdef enum:
    REPETITION = 0
    RECIPROCITY = 1
    SENDER_ACTIVITY = 2
    RECEIVER_POPULARITY = 3
    TRANSITIVE = 4
    CYCLIC = 5
    LAST_RECEIVER = 6

cdef enum:
    INDICATOR = 0
    VOLUME = 1
    EXP_DECAY = 2
    TEMPORAL = 3

cdef double LN2 = 0.6931471805599453


cdef inline double _block_value(int block, double vol, double last, double dec,
                                double k, double t) nogil:
    if block == VOLUME:
        return vol
    if block == INDICATOR:
        return 1.0 if vol > 0 else 0.0
    if block == TEMPORAL:
        if isnan(last):
            return 1.0
        return 1.0 - exp(-(t - last))
    # EXP_DECAY
    if isnan(last):
        return 0.0
    return dec * exp(-k * (t - last))


def sweep(const long[:] ev_s, const long[:] ev_r, const double[:] ev_t,
          const double[:] ev_w, long n_send, long n_recv,
          const long[:] q_s, const long[:] q_r, const double[:] q_t,
          const long[:] mech, const long[:] block, const long[:] hl,
          const double[:] halflives, double cap, bint closure):
    cdef Py_ssize_t n_q = q_t.shape[0]
    cdef Py_ssize_t n_f = mech.shape[0]
    cdef Py_ssize_t n_ev = ev_t.shape[0]
    cdef Py_ssize_t nh = halflives.shape[0]
    cdef Py_ssize_t q, f, h, e = 0, k
    cdef long s, r, a, b, m, blk, hi
    cdef double t, w, d, old, after, vol, lst, dec, kk
    if closure and n_send != n_recv:
        raise ValueError("closure statistics need a one-mode network")
    for f in range(n_f):
        if block[f] == EXP_DECAY and (mech[f] == TRANSITIVE or mech[f] == CYCLIC):
            raise ValueError("exponential decay is not defined for closure statistics")
        if mech[f] < 0 or mech[f] > LAST_RECEIVER:
            raise ValueError(f"unknown mechanism code {mech[f]}")
        if block[f] < 0 or block[f] > TEMPORAL:
            raise ValueError(f"unknown block code {block[f]}")

    out_arr = np.empty((n_q, n_f))
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] count = np.zeros((n_send, n_recv))
    cdef double[:, ::1] last = np.full((n_send, n_recv), np.nan)
    cdef double[::1] out_count = np.zeros(n_send)
    cdef double[::1] in_count = np.zeros(n_recv)
    cdef double[::1] out_last = np.full(n_send, np.nan)
    cdef double[::1] in_last = np.full(n_recv, np.nan)
    cdef long[::1] last_receiver = np.full(n_send, -1, dtype=np.int_)
    cdef double[:, :, ::1] decay = np.zeros((nh, n_send, n_recv))
    cdef double[:, ::1] out_decay = np.zeros((nh, n_send))
    cdef double[:, ::1] in_decay = np.zeros((nh, n_recv))
    cdef double[::1] ks = np.empty(nh)
    cdef Py_ssize_t ncl = n_send if closure else 0
    cdef double[:, ::1] capped = np.zeros((ncl, ncl))
    cdef double[:, ::1] twopath = np.zeros((ncl, ncl))
    cdef double[:, ::1] anchor = np.full((ncl, ncl), np.nan)
    cdef double[::1] rowbuf = np.empty(ncl)
    cdef double[::1] colbuf = np.empty(ncl)

    for h in range(nh):
        ks[h] = LN2 / halflives[h]

    with nogil:
        for q in range(n_q):
            t = q_t[q]
            while e < n_ev and ev_t[e] < t:
                s = ev_s[e]
                r = ev_r[e]
                w = ev_w[e]
                if closure:
                    old = capped[s, r]
                    d = min(count[s, r] + w, cap) - min(count[s, r], cap)
                    if d > 0:
                        for k in range(ncl):
                            rowbuf[k] = capped[r, k]
                            colbuf[k] = capped[k, s]
                        for k in range(ncl):
                            twopath[s, k] += d * rowbuf[k]
                        for k in range(ncl):
                            twopath[k, r] += d * colbuf[k]
                        if s == r:
                            twopath[s, r] += d * d
                        capped[s, r] = old + d
                    after = count[s, r] + w
                    for k in range(ncl):
                        if count[r, k] > 0 or (s == r and k == r and after > 0):
                            anchor[s, k] = ev_t[e]
                    for k in range(ncl):
                        if count[k, s] > 0 or (s == r and k == s and after > 0):
                            anchor[k, r] = ev_t[e]
                for h in range(nh):
                    if not isnan(last[s, r]):
                        decay[h, s, r] *= exp(-ks[h] * (ev_t[e] - last[s, r]))
                    decay[h, s, r] += ks[h] * w
                    if not isnan(out_last[s]):
                        out_decay[h, s] *= exp(-ks[h] * (ev_t[e] - out_last[s]))
                    out_decay[h, s] += ks[h] * w
                    if not isnan(in_last[r]):
                        in_decay[h, r] *= exp(-ks[h] * (ev_t[e] - in_last[r]))
                    in_decay[h, r] += ks[h] * w
                count[s, r] += w
                last[s, r] = ev_t[e]
                out_count[s] += w
                in_count[r] += w
                out_last[s] = ev_t[e]
                in_last[r] = ev_t[e]
                last_receiver[s] = r
                e += 1

            s = q_s[q]
            r = q_r[q]
            for f in range(n_f):
                m = mech[f]
                blk = block[f]
                hi = hl[f]
                dec = 0.0
                kk = 0.0
                if m == LAST_RECEIVER:
                    out[q, f] = <double>last_receiver[s]
                    continue
                if m == REPETITION or m == RECIPROCITY:
                    if m == REPETITION:
                        a = s
                        b = r
                    else:
                        a = r
                        b = s
                    vol = count[a, b]
                    lst = last[a, b]
                    if blk == EXP_DECAY:
                        dec = decay[hi, a, b]
                elif m == SENDER_ACTIVITY:
                    vol = out_count[s]
                    lst = out_last[s]
                    if blk == EXP_DECAY:
                        dec = out_decay[hi, s]
                elif m == RECEIVER_POPULARITY:
                    vol = in_count[r]
                    lst = in_last[r]
                    if blk == EXP_DECAY:
                        dec = in_decay[hi, r]
                else:
                    if m == TRANSITIVE:
                        a = s
                        b = r
                    else:
                        a = r
                        b = s
                    vol = twopath[a, b]
                    lst = anchor[a, b]
                if blk == EXP_DECAY:
                    kk = ks[hi]
                out[q, f] = _block_value(blk, vol, lst, dec, kk, t)
    return out_arr


def grouped_loglik(const double[:, ::1] X, const long[:] offsets,
                   const long[:] case_rows, const double[:] theta,
                   bint want_hess=True):
    cdef Py_ssize_t P = X.shape[1]
    cdef Py_ssize_t G = offsets.shape[0] - 1
    cdef Py_ssize_t g, i, j, k
    cdef double value = 0.0, gmax, denom, eta, p
    grad_arr = np.zeros(P)
    hess_arr = np.zeros((P, P))
    cdef double[::1] grad = grad_arr
    cdef double[:, ::1] hess = hess_arr
    cdef double[::1] etas = np.empty(X.shape[0])
    cdef double[::1] mean = np.empty(P)
    cdef double[:, ::1] second = np.zeros((P, P))

    with nogil:
        for i in range(X.shape[0]):
            eta = 0.0
            for j in range(P):
                eta += X[i, j] * theta[j]
            etas[i] = eta
        for g in range(G):
            gmax = -INFINITY
            for i in range(offsets[g], offsets[g + 1]):
                if etas[i] > gmax:
                    gmax = etas[i]
            denom = 0.0
            for i in range(offsets[g], offsets[g + 1]):
                denom += exp(etas[i] - gmax)
            value += etas[case_rows[g]] - gmax - log(denom)
            for j in range(P):
                mean[j] = 0.0
            for i in range(offsets[g], offsets[g + 1]):
                p = exp(etas[i] - gmax) / denom
                for j in range(P):
                    mean[j] += p * X[i, j]
                if want_hess:
                    for j in range(P):
                        for k in range(j, P):
                            second[j, k] += p * X[i, j] * X[i, k]
            for j in range(P):
                grad[j] += X[case_rows[g], j] - mean[j]
            if want_hess:
                for j in range(P):
                    for k in range(j, P):
                        hess[j, k] += mean[j] * mean[k]
        if want_hess:
            for j in range(P):
                for k in range(j, P):
                    hess[j, k] -= second[j, k]
                    hess[k, j] = hess[j, k]
    if not want_hess:
        return value, grad_arr, None
    return value, grad_arr, hess_arr


def grouped_expectation(const double[:, ::1] X, const long[:] offsets,
                        const double[:] theta):
    cdef Py_ssize_t P = X.shape[1]
    cdef Py_ssize_t G = offsets.shape[0] - 1
    cdef Py_ssize_t g, i, j
    cdef double gmax, denom, eta, p
    out_arr = np.zeros((G, P))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] etas = np.empty(X.shape[0])
    with nogil:
        for i in range(X.shape[0]):
            eta = 0.0
            for j in range(P):
                eta += X[i, j] * theta[j]
            etas[i] = eta
        for g in range(G):
            gmax = -INFINITY
            for i in range(offsets[g], offsets[g + 1]):
                if etas[i] > gmax:
                    gmax = etas[i]
            denom = 0.0
            for i in range(offsets[g], offsets[g + 1]):
                denom += exp(etas[i] - gmax)
            for i in range(offsets[g], offsets[g + 1]):
                p = exp(etas[i] - gmax) / denom
                for j in range(P):
                    out[g, j] += p * X[i, j]
    return out_arr
