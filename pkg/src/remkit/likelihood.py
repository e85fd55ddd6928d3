"""Log-likelihoods with analytic gradients and Hessians.

All functions return ``(value, gradient, hessian)``; the Hessian is None
when ``want_hess`` is false.
"""

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import InputError


def loglik_poisson(X, y, offset, theta, want_hess=True):
    """Poisson log-likelihood sum(y * eta - exp(eta)), eta = X theta + offset.

    The constant sum(y * offset) - log(y!) terms are kept only through eta,
    so the value equals the piecewise-exponential full log-likelihood.
    """
    eta = X @ theta + offset
    mu = np.exp(eta)
    value = float(y @ eta - mu.sum())
    grad = X.T @ (y - mu)
    hess = -(X.T @ (X * mu[:, None])) if want_hess else None
    return value, grad, hess


def loglik_partial(X, offsets, case_rows, theta, want_hess=True):
    """Sum over risk sets of log softmax(eta)[case], stabilised by max-subtraction."""
    if len(offsets) < 2:
        raise InputError("no risk sets")
    if np.any(np.diff(offsets) <= 0):
        raise InputError("empty risk set")
    return kernels.grouped_loglik(X, offsets, case_rows, theta, want_hess)


def loglik_sampled(X, offsets, case_rows, theta, want_hess=True):
    """Sampled partial likelihood: the partial likelihood over sampled risk sets."""
    return loglik_partial(X, offsets, case_rows, theta, want_hess)


def loglik_case_control(D, theta, want_hess=True):
    """Sum of log sigmoid(theta' dh) over case-minus-control rows."""
    eta = D @ theta
    value = float(-np.logaddexp(0.0, -eta).sum())
    p = expit(-eta)  # 1 - sigmoid(eta)
    grad = D.T @ p
    hess = -(D.T @ (D * (p * (1.0 - p))[:, None])) if want_hess else None
    return value, grad, hess


def evaluate(mm, theta, want_hess=True):
    """Log-likelihood of a ModelMatrix according to its layout."""
    theta = np.asarray(theta, dtype=float)
    if mm.kind == "poisson":
        return loglik_poisson(mm.X, mm.y, mm.offset, theta, want_hess)
    if mm.kind == "grouped":
        return loglik_partial(mm.X, mm.offsets, mm.case_rows, theta, want_hess)
    if mm.kind == "paired":
        return loglik_case_control(mm.X, theta, want_hess)
    raise InputError(f"unknown layout {mm.kind!r}")


def unit_scores(mm, theta):
    """Per-event score contributions, shape (n_units, P).

    Row i is the gradient of event i's log-likelihood term; the rows sum to
    the full score.
    """
    theta = np.asarray(theta, dtype=float)
    X = mm.X
    starts = mm.offsets[:-1]
    if mm.kind == "grouped":
        mean = kernels.grouped_expectation(X, mm.offsets, theta)
        return X[mm.case_rows] - mean
    if mm.kind == "paired":
        p = expit(-(X @ theta))
        return np.add.reduceat(X * p[:, None], starts, axis=0)
    resid = mm.y - np.exp(X @ theta + mm.offset)
    return np.add.reduceat(X * resid[:, None], starts, axis=0)


def unit_logliks(mm, theta):
    """Per-event log-likelihood terms (used for held-out scoring)."""
    theta = np.asarray(theta, dtype=float)
    X = mm.X
    starts = mm.offsets[:-1]
    eta = X @ theta
    if mm.kind == "grouped":
        sizes = np.diff(mm.offsets)
        gmax = np.maximum.reduceat(eta, starts)
        lse = gmax + np.log(np.add.reduceat(np.exp(eta - np.repeat(gmax, sizes)), starts))
        return eta[mm.case_rows] - lse
    if mm.kind == "paired":
        return np.add.reduceat(-np.logaddexp(0.0, -eta), starts)
    eta = eta + mm.offset
    return np.add.reduceat(mm.y * eta - np.exp(eta), starts)
