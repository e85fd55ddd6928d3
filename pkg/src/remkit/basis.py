"""Spline bases and their wiggliness penalties."""

import warnings

import numpy as np

from .errors import InputError


def bspline_basis(x, knots, degree, return_clamped=False):
    """B-spline basis matrix of shape (len(x), len(knots) - degree - 1).

    ``knots`` is the full non-decreasing knot vector, boundary padding
    included.  Points outside [knots[degree], knots[-degree-1]] are clamped
    to that interval and counted.  Uses the triangular (de Boor) scheme, so
    exactly degree+1 entries per row can be nonzero.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.asarray(knots, dtype=float)
    p = int(degree)
    nb = len(t) - p - 1
    if p < 0 or nb < 1:
        raise InputError("need at least degree + 2 knots")
    if np.any(np.diff(t) < 0):
        raise InputError("knots must be non-decreasing")
    lo, hi = t[p], t[nb]
    if not hi > lo:
        raise InputError("degenerate knot span")
    outside = (x < lo) | (x > hi)
    n_clamped = int(outside.sum())
    xc = np.clip(x, lo, hi)
    # span index i with t[i] <= x < t[i+1], the right end joining the last span
    span = np.searchsorted(t, xc, side="right") - 1
    span = np.clip(span, p, nb - 1)
    n = len(xc)
    N = np.zeros((n, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((n, p + 1))
    right = np.zeros((n, p + 1))
    for j in range(1, p + 1):
        left[:, j] = xc - t[span + 1 - j]
        right[:, j] = t[span + j] - xc
        saved = np.zeros(n)
        for r in range(j):
            den = right[:, r + 1] + left[:, j - r]
            tmp = np.divide(N[:, r], den, out=np.zeros(n), where=den != 0)
            N[:, r] = saved + right[:, r + 1] * tmp
            saved = left[:, j - r] * tmp
        N[:, j] = saved
    B = np.zeros((n, nb))
    rows = np.arange(n)[:, None]
    B[rows, span[:, None] - p + np.arange(p + 1)[None, :]] = N
    if n_clamped and not return_clamped:
        warnings.warn(f"{n_clamped} points clamped into the B-spline range")
    return (B, n_clamped) if return_clamped else B


def quantile_knots(x, k, degree):
    """Knot vector for k basis functions: quantile interior knots, repeated ends."""
    x = np.asarray(x, dtype=float)
    lo, hi = float(np.min(x)), float(np.max(x))
    if not hi > lo:
        raise InputError("covariate is constant; a spline needs spread")
    n_int = k - degree - 1
    if n_int < 0:
        raise InputError(f"k={k} is too small for degree {degree}")
    inner = np.quantile(x, np.linspace(0, 1, n_int + 2)[1:-1]) if n_int else np.empty(0)
    inner = np.maximum.accumulate(inner)
    return np.r_[np.full(degree + 1, lo), inner, np.full(degree + 1, hi)]


def difference_penalty(k, order=2):
    """D^T D with D the order-th difference operator on k coefficients."""
    D = np.diff(np.eye(k), n=order, axis=0)
    return D.T @ D


def tp_radial(r):
    """r^2 log r with the limit value 0 at r = 0."""
    r = np.abs(np.asarray(r, dtype=float))
    out = np.zeros_like(r)
    pos = r > 0
    out[pos] = r[pos] ** 2 * np.log(r[pos])
    return out


def thinplate_basis(t, delta):
    """Matrix of b(|t - delta_j|), one column per control point."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    delta = np.asarray(delta, dtype=float)
    return tp_radial(t[:, None] - delta[None, :])


def thinplate_penalty(delta):
    """Q E Q with E_jk = b(|delta_j - delta_k|) and Q the projector off span{1, delta}.

    For r^2 log r the quadratic form is non-negative on coefficient vectors
    orthogonal to the affine functions, so the result is PSD with a null
    space of dimension 2.
    """
    delta = np.asarray(delta, dtype=float)
    E = thinplate_basis(delta, delta)
    T = np.column_stack([np.ones_like(delta), delta])
    Q = np.eye(len(delta)) - T @ np.linalg.pinv(T)
    S = Q @ E @ Q
    S = 0.5 * (S + S.T)
    w = np.linalg.eigvalsh(S)
    if w.min() < -1e-9 * max(1.0, w.max()):
        raise AssertionError("thin-plate penalty is not PSD")
    return S


def sum_to_zero(means):
    """Orthonormal basis Z of the complement of ``means`` (k x (k-1))."""
    c = np.asarray(means, dtype=float).reshape(-1, 1)
    Q, _ = np.linalg.qr(c, mode="complete")
    return Q[:, 1:]


class SmoothBasis:
    """Base for fitted bases: ``fit`` on pooled data, then ``transform``."""

    penalty = None
    null_dim = 0

    def columns(self):
        raise NotImplementedError


class BSplineSmooth(SmoothBasis):
    """Cubic (or lower) B-spline with a sum-to-zero constraint and D2 penalty."""

    def __init__(self, k, degree=None):
        self.k = k
        self.degree = min(3, k - 1) if degree is None else degree

    def fit(self, x):
        x = np.asarray(x, dtype=float)
        self.knots = quantile_knots(x, self.k, self.degree)
        B = bspline_basis(x, self.knots, self.degree)
        self.Z = sum_to_zero(B.mean(axis=0))
        self.penalty = self.Z.T @ difference_penalty(self.k, 2) @ self.Z
        self.penalty = 0.5 * (self.penalty + self.penalty.T)
        self.null_dim = 1
        self.range = (self.knots[0], self.knots[-1])
        return self

    def transform(self, x, quiet=False):
        B, nc = bspline_basis(x, self.knots, self.degree, return_clamped=True)
        if nc and not quiet:
            warnings.warn(f"{nc} points clamped into the B-spline range")
        return B @ self.Z

    def to_dict(self):
        return {"type": "bspline", "k": self.k, "degree": self.degree,
                "knots": self.knots.tolist(), "Z": self.Z.tolist()}


class ThinPlateSmooth(SmoothBasis):
    """Smooth of a covariate on b(|u - delta_j|), u the covariate scaled to [0, 1]."""

    def __init__(self, k):
        self.k = k

    def fit(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = float(x.min()), float(x.max())
        if not hi > lo:
            raise InputError("covariate is constant; a spline needs spread")
        self.range = (lo, hi)
        self.delta = np.linspace(0.0, 1.0, self.k)
        B = thinplate_basis(self._scale(x), self.delta)
        self.Z = sum_to_zero(B.mean(axis=0))
        self.penalty = self.Z.T @ thinplate_penalty(self.delta) @ self.Z
        self.penalty = 0.5 * (self.penalty + self.penalty.T)
        self.null_dim = int(np.sum(np.linalg.eigvalsh(self.penalty) < 1e-10 * np.abs(self.penalty).max()))
        return self

    def _scale(self, x):
        lo, hi = self.range
        return (np.asarray(x, dtype=float) - lo) / (hi - lo)

    def transform(self, x, quiet=False):
        return thinplate_basis(self._scale(x), self.delta) @ self.Z

    def to_dict(self):
        return {"type": "thinplate", "k": self.k, "range": list(self.range)}


class TimeVaryingBasis(SmoothBasis):
    """Coefficient beta(t) = sum_j theta_j b(|u(t) - delta_j|), u(t) = t rescaled to [0, 1].

    Columns for covariate x at time t are x * b(|u(t) - delta_j|).  The
    penalty is the projected thin-plate matrix on the control points.
    """

    def __init__(self, q, window):
        self.k = q
        self.window = (float(window[0]), float(window[1]))
        if not self.window[1] > self.window[0]:
            raise InputError("time-varying effect needs a window of positive length")
        self.delta = np.linspace(0.0, 1.0, q)
        self.penalty = thinplate_penalty(self.delta)
        self.null_dim = 2
        self.range = self.window

    def fit(self, x=None):
        return self

    def coefficient_basis(self, t):
        u = (np.asarray(t, dtype=float) - self.window[0]) / (self.window[1] - self.window[0])
        return thinplate_basis(u, self.delta)

    def transform(self, x, t):
        return np.asarray(x, dtype=float)[:, None] * self.coefficient_basis(t)

    def to_dict(self):
        return {"type": "tve", "q": self.k, "window": list(self.window)}
