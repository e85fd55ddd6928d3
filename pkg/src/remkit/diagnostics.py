"""Model comparison (AIC) and goodness of fit from cumulative score residuals."""

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTermError, InputError, RegimeMismatchError
from .fitting import penalty_matrix
from .likelihood import evaluate, unit_scores

DEFAULT_B = 10000


def aic(fit):
    """-2 log L + 2 * effective degrees of freedom."""
    if not fit.converged:
        warnings.warn("AIC of a fit that did not converge")
    return -2.0 * fit.loglik + 2.0 * fit.edf_total


def kolmogorov_sf(t, tol=1e-12):
    """P(sup |Brownian bridge| > t).

    Uses 2 sum_k (-1)^(k-1) exp(-2 k^2 t^2), stopping once a term drops
    below ``tol``.  Below t = 0.6 that series converges slowly, so the dual
    theta-function form 1 - sqrt(2 pi)/t sum exp(-(2k-1)^2 pi^2 / (8 t^2))
    is used instead.
    """
    t = float(t)
    if t <= 0:
        return 1.0
    if t < 0.6:
        acc = 0.0
        k = 1
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8 * t * t))
            acc += term
            if term < tol:
                break
            k += 1
        return min(1.0, max(0.0, 1.0 - math.sqrt(2 * math.pi) / t * acc))
    acc = 0.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * t * t)
        acc += term if k % 2 else -term
        if term < tol:
            break
        k += 1
    return min(1.0, max(0.0, 2.0 * acc))


def simulate_bridge(q, n, rng=None, B=1, return_path=False, bridge=True,
                    chunk_elems=4_000_000):
    """Standard q-dimensional Brownian bridges on the grid {1/n, ..., 1}.

    Each path is a cumulative sum of N(0, 1/n) steps minus u times its
    endpoint (so the value at u = 1 is exactly 0); with ``bridge=False`` the
    Brownian motion itself.  Paths are drawn in chunks, each from its own
    child seed, so results do not depend on memory limits.

    Returns a dict with ``sup_sq`` (sup of squared norm), ``sup_abs`` (q = 1
    only) and ``paths`` of shape (B, n, q) when requested.
    """
    if B < 1:
        raise InputError("bridge simulation needs B >= 1 replications")
    if q < 1 or n < 1:
        raise InputError("q and n must be positive")
    if isinstance(rng, np.random.Generator):
        root = np.random.SeedSequence(int(rng.integers(2**63)))
    else:
        root = np.random.SeedSequence(rng)
    per = max(1, chunk_elems // (n * q))
    n_chunks = -(-B // per)
    children = root.spawn(n_chunks)
    u = (np.arange(1, n + 1) / n)[None, :, None]
    sup_sq = np.empty(B)
    sup_abs = np.empty(B) if q == 1 else None
    paths = np.empty((B, n, q)) if return_path else None
    for c in range(n_chunks):
        lo, hi = c * per, min(B, (c + 1) * per)
        g = np.random.default_rng(children[c])
        W = np.cumsum(g.standard_normal((hi - lo, n, q)), axis=1) / math.sqrt(n)
        if bridge:
            W = W - u * W[:, -1:, :]
        sq = np.einsum("bnq,bnq->bn", W, W)
        sup_sq[lo:hi] = sq.max(axis=1)
        if q == 1:
            sup_abs[lo:hi] = np.abs(W[:, :, 0]).max(axis=1)
        if return_path:
            paths[lo:hi] = W
    out = {"sup_sq": sup_sq}
    if q == 1:
        out["sup_abs"] = sup_abs
    if return_path:
        out["paths"] = paths
    return out


@dataclass
class GofResult:
    term: str
    process: np.ndarray
    statistic: float
    p_value: float
    method: str
    j_hat: np.ndarray = None
    B: int = None
    rank: int = None

    def to_dict(self):
        d = {"statistic": float(self.statistic), "p_value": float(self.p_value),
             "method": self.method}
        if self.B is not None:
            d["B"] = int(self.B)
        if self.rank is not None:
            d["rank"] = int(self.rank)
        return d

    def path_to_csv(self, path):
        P = np.atleast_2d(self.process.T).T
        n = len(P)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u"] + [f"W{j + 1}" for j in range(P.shape[1])])
            for i in range(n):
                w.writerow([repr((i + 1) / n)] + [repr(float(v)) for v in P[i]])


def _check_regime(fit, mm):
    if fit.regime != mm.kind or len(fit.theta) != mm.n_params or \
            list(fit.column_names) != list(mm.column_names):
        raise RegimeMismatchError(
            f"fit ({fit.regime}, {len(fit.theta)} columns) does not match data "
            f"({mm.kind}, {mm.n_params} columns)")


def gof_process(fit, mm, center=True):
    """Cumulative per-event score residuals G(theta_hat, i/n), i = 1..n.

    Increments are observed minus model-expected covariates for each event
    (h_case minus the risk-set mean under theta_hat, or its case-control and
    Poisson analogues).  For penalized blocks each increment is shifted by
    the penalty gradient / n, so the path ends at the penalized score.
    Returns an (n, P) array.
    """
    _check_regime(fit, mm)
    U = unit_scores(mm, fit.theta)
    if center:
        P = penalty_matrix(mm, fit.nu)
        U = U - (2.0 * P @ fit.theta) / mm.n_units
    return np.cumsum(U, axis=0)


def gof_test_linear(fit, mm, term):
    """Kolmogorov-type test for one unpenalized single-column term."""
    _check_regime(fit, mm)
    b = mm.block(term)
    if b.penalized or b.size != 1:
        raise InputError(f"{term}: linear test needs an unpenalized single-column term")
    j = b.cols.start
    info = float(fit.information[j, j])
    if not info > 0:
        raise DegenerateTermError(f"{term}: zero Fisher information")
    G = gof_process(fit, mm)[:, j]
    W = G / math.sqrt(info)
    T = float(np.max(np.abs(W)))
    return GofResult(term, W, T, kolmogorov_sf(T), "kolmogorov-exact")


def _inv_sqrt(J):
    w, V = np.linalg.eigh(0.5 * (J + J.T))
    keep = w > 1e-10 * max(w.max(initial=0.0), 1e-300)
    rank = int(keep.sum())
    if rank == 0:
        raise DegenerateTermError("empirical covariance of the residual increments is zero")
    M = (V[:, keep] / np.sqrt(w[keep])) @ V[:, keep].T
    return M, rank


def _sup_test(term, C, B, seed, bridge):
    n = len(C)
    J = np.cov(C, rowvar=False, bias=True).reshape(C.shape[1], C.shape[1])
    Jm, rank = _inv_sqrt(J)
    if rank < C.shape[1]:
        warnings.warn(f"{term}: J_hat singular, pseudo-inverse of rank {rank} used")
    W = (np.cumsum(C, axis=0) @ Jm.T) / math.sqrt(n)
    T = float(np.max(np.einsum("ij,ij->i", W, W)))
    null = simulate_bridge(rank, n, seed, B, bridge=bridge)["sup_sq"]
    p = float(np.mean(null >= T))
    return GofResult(term, W, T, p, f"{'bridge' if bridge else 'motion'}-simulation", J, B, rank)


def _check_B(B):
    if B is None or B < 1:
        raise InputError("a positive number of bridge replications B is required")
    if B < 1000:
        warnings.warn(f"B={B} bridge replications; at least 1000 recommended")


def gof_test_smooth(fit, mm, term, B=DEFAULT_B, seed=0):
    """Sup-norm test for a penalized block against simulated Brownian bridges."""
    _check_B(B)
    _check_regime(fit, mm)
    b = mm.block(term)
    if not b.penalized:
        raise InputError(f"{term}: smooth test needs a penalized term")
    U = unit_scores(mm, fit.theta)[:, b.cols]
    P = penalty_matrix(mm, fit.nu)
    C = U - (2.0 * P @ fit.theta)[b.cols] / mm.n_units
    return _sup_test(term, C, B, seed, bridge=True)


def gof_test_omitted(fit, mm_ext, term, B=DEFAULT_B, seed=0):
    """Test a basis block that the fitted model leaves out.

    ``mm_ext`` holds the fitted columns plus the block ``term``.  Score
    increments of the block are taken at theta_hat (block coefficients 0)
    and residualised against the fitted columns with the information
    matrix.  The endpoint is then not pinned at zero, so the reference is
    sup of squared norm of a q-dimensional Brownian motion.
    """
    _check_B(B)
    b = mm_ext.block(term)
    names = list(mm_ext.column_names)
    try:
        idx = np.array([names.index(c) for c in fit.column_names])
    except ValueError as exc:
        raise RegimeMismatchError(f"extended design lacks a fitted column: {exc}") from None
    if fit.regime != mm_ext.kind:
        raise RegimeMismatchError("fit and extended design use different likelihoods")
    theta = np.zeros(mm_ext.n_params)
    theta[idx] = fit.theta
    U = unit_scores(mm_ext, theta)
    o = np.arange(b.cols.start, b.cols.stop)
    _, _, h = evaluate(mm_ext, theta)
    info = -h
    Iff = fit.curvature
    Iof = info[np.ix_(o, idx)]
    P = penalty_matrix(mm_ext, {**fit.nu, term: 0.0})
    Uf = U[:, idx] - (2.0 * P @ theta)[idx] / mm_ext.n_units
    C = U[:, o] - Uf @ np.linalg.solve(Iff, Iof.T)
    return _sup_test(term, C, B, seed, bridge=False)


def gof_report(results, path=None):
    d = {r.term: r.to_dict() for r in results}
    text = json.dumps(d, indent=2)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return d
