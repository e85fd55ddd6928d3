"""Penalized maximum likelihood: Newton-Raphson, ADAM and smoothing selection."""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ConvergenceError, FitError
from .likelihood import evaluate, unit_logliks, unit_scores

NU_GRID = 10.0 ** np.arange(-4, 5)
FIT_SCHEMA = "remkit.fit/1"


@dataclass
class OptimizerConfig:
    method: str = "newton"
    tol: float = 1e-8
    max_iter: int = None
    alpha: float = 1e-3
    xi1: float = 0.9
    xi2: float = 0.999
    eps: float = 1e-8
    batch_size: int = None
    lr_decay: float = 0.0
    seed: int = 0
    separation_threshold: float = 15.0

    def __post_init__(self):
        if self.method not in ("newton", "adam"):
            raise FitError(f"unknown optimizer {self.method!r}")
        if not (0 <= self.xi1 < 1 and 0 <= self.xi2 < 1):
            raise FitError("xi1 and xi2 must lie in [0, 1)")
        if not self.eps > 0:
            raise FitError("eps must be positive")
        if self.max_iter is None:
            self.max_iter = 100 if self.method == "newton" else 20000


def penalty_matrix(mm, nu):
    """P with sum_l nu_l theta_l' S_l theta_l = theta' P theta."""
    P = np.zeros((mm.n_params, mm.n_params))
    for b in mm.blocks:
        if b.penalized:
            P[b.cols, b.cols] += nu[b.label] * b.penalty
    return P


class Objective:
    """Penalized log-likelihood log L(theta) - theta' P theta."""

    def __init__(self, mm, P):
        self.mm = mm
        self.P = P

    def __call__(self, theta, want_hess=True):
        v, g, h = evaluate(self.mm, theta, want_hess)
        Pt = self.P @ theta
        F = v - theta @ Pt
        G = g - 2.0 * Pt
        Hf = None if h is None else h - 2.0 * self.P
        return F, G, Hf, v, h


@dataclass
class FitResult:
    theta: np.ndarray
    column_names: list
    blocks: list
    loglik: float
    penalized_loglik: float
    score_inf: float
    curvature: np.ndarray
    information: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    edf: dict
    edf_total: float
    nu: dict
    regime: str
    iterations: int
    converged: bool
    separated: bool = False
    message: str = ""
    n_units: int = 0
    method: str = "newton"
    history: list = field(default_factory=list)

    def coef(self, name):
        return float(self.theta[self.column_names.index(name)])

    def stderr(self, name):
        return float(self.se[self.column_names.index(name)])

    def block(self, label):
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    @property
    def aic(self):
        return -2.0 * self.loglik + 2.0 * self.edf_total

    def to_dict(self, grids=None):
        d = {
            "schema": FIT_SCHEMA,
            "regime": self.regime,
            "method": self.method,
            "converged": bool(self.converged),
            "separated": bool(self.separated),
            "message": self.message,
            "iterations": int(self.iterations),
            "n_events": int(self.n_units),
            "loglik": float(self.loglik),
            "penalized_loglik": float(self.penalized_loglik),
            "score_inf": float(self.score_inf),
            "edf_total": float(self.edf_total),
            "aic": float(self.aic),
            "coefficients": {n: float(v) for n, v in zip(self.column_names, self.theta)},
            "se": {n: float(v) for n, v in zip(self.column_names, self.se)},
            "terms": [
                {"label": b.label, "kind": "intercept" if b.term is None else b.term.kind,
                 "columns": self.column_names[b.cols],
                 "edf": float(self.edf[b.label]),
                 "nu": None if b.label not in self.nu else float(self.nu[b.label])}
                for b in self.blocks
            ],
        }
        if grids is not None:
            d["grids"] = grids
        return d

    def to_json(self, path=None, grids=None):
        text = json.dumps(self.to_dict(grids), indent=2, sort_keys=False)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def _solve_pd(A, b, scale):
    """Solve A x = b for symmetric A, adding Levenberg damping until it factors."""
    lam = 0.0
    for _ in range(40):
        try:
            c = cho_factor(A + lam * np.eye(len(A)), lower=True, check_finite=True)
            return cho_solve(c, b), lam
        except (LinAlgError, ValueError):
            lam = 1e-10 * scale if lam == 0.0 else lam * 10.0
    raise FitError("indefinite curvature persists after Levenberg damping")


def newton(obj, theta0, config, trace=None):
    """Maximise ``obj`` by damped Newton with step halving.

    Returns (theta, iterations, converged, separated, message).
    """
    theta = np.array(theta0, dtype=float)
    F, G, H, _, _ = obj(theta)
    if not math.isfinite(F):
        raise FitError("objective is not finite at the starting point")
    if trace is not None:
        trace.append(F)
    for it in range(1, config.max_iter + 1):
        gmax = float(np.max(np.abs(G), initial=0.0))
        if gmax < config.tol:
            return theta, it - 1, True, False, "converged"
        A = -H
        scale = max(1.0, float(np.max(np.abs(np.diag(A)), initial=1.0)))
        d, _ = _solve_pd(A, G, scale)
        step = 1.0
        accepted = False
        for _ in range(60):
            cand = theta + step * d
            Fn, Gn, Hn, _, _ = obj(cand)
            if math.isfinite(Fn) and (Fn >= F or (
                    F - Fn <= 1e-11 * (1.0 + abs(F))
                    and np.max(np.abs(Gn), initial=0.0) < gmax)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return theta, it, gmax < config.tol, False, "line search stalled"
        improving = Fn > F + 1e-10 * (1.0 + abs(F))
        theta, F, G, H = cand, Fn, Gn, Hn
        if trace is not None:
            trace.append(F)
        if np.max(np.abs(theta), initial=0.0) > config.separation_threshold and improving:
            return theta, it, False, True, (
                f"monotone likelihood: |theta| exceeded {config.separation_threshold:g} "
                "while the likelihood kept increasing (separation)")
    gmax = float(np.max(np.abs(G), initial=0.0))
    if gmax < config.tol:
        return theta, config.max_iter, True, False, "converged"
    return theta, config.max_iter, False, False, f"no convergence in {config.max_iter} iterations"


def adam(mm, P, theta0, config, trace=None):
    """Stochastic gradient ascent with ADAM on the penalized log-likelihood.

    Minibatches are drawn from a seeded shuffle of the events; the batch
    score is scaled by n / |batch|.  The step size is alpha / (1 + lr_decay * iter).
    """
    rng = np.random.default_rng(config.seed)
    n = mm.n_units
    bs = n if config.batch_size is None else min(int(config.batch_size), n)
    theta = np.array(theta0, dtype=float)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    full = Objective(mm, P)
    it = 0
    order = np.arange(n)
    pos = n
    while it < config.max_iter:
        if bs == n:
            g = full(theta, want_hess=False)[1]
        else:
            if pos + bs > n:
                order = rng.permutation(n)
                pos = 0
            batch = np.sort(order[pos:pos + bs])
            pos += bs
            sub = mm.subset(batch)
            g = unit_scores(sub, theta).sum(axis=0) * (n / bs) - 2.0 * (P @ theta)
        it += 1
        m = config.xi1 * m + (1 - config.xi1) * g
        v = config.xi2 * v + (1 - config.xi2) * g * g
        mhat = m / (1 - config.xi1 ** it)
        vhat = v / (1 - config.xi2 ** it)
        lr = config.alpha / (1.0 + config.lr_decay * it)
        theta = theta + lr * mhat / (np.sqrt(vhat) + config.eps)
        if bs == n or it % max(1, n // bs) == 0:
            F, G = full(theta, want_hess=False)[:2]
            if trace is not None:
                trace.append(F)
            if np.max(np.abs(G), initial=0.0) < config.tol:
                return theta, it, True, False, "converged"
    return theta, it, False, False, f"ADAM stopped after {it} iterations"


def _finish(mm, theta, nu, P, its, conv, sep, msg, method):
    v, g, h = evaluate(mm, theta)
    info = -h
    A = info + 2.0 * P
    A = 0.5 * (A + A.T)
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise FitError("singular curvature at the optimum") from None
    if np.any(P):
        cov = Ainv @ info @ Ainv
    else:
        cov = Ainv
    cov = 0.5 * (cov + cov.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    F_mat = Ainv @ info
    edf = {}
    for b in mm.blocks:
        edf[b.label] = float(np.trace(F_mat[b.cols, b.cols]))
    score = g - 2.0 * P @ theta
    res = FitResult(theta, list(mm.column_names), mm.blocks, float(v),
                    float(v - theta @ P @ theta), float(np.max(np.abs(score), initial=0.0)),
                    A, info, cov, se, edf, float(sum(edf.values())), dict(nu), mm.kind, its,
                    bool(conv), bool(sep), msg, mm.n_units, method)
    if conv:
        w = np.linalg.eigvalsh(A)
        if w.min() <= 0:
            res.converged = False
            res.message = "curvature not positive definite at the optimum"
    return res


def fit(mm, config=None, nu=None, theta0=None, folds=5, cv_seed=0, passes=1):
    """Fit a model matrix.

    ``nu`` maps penalized block labels to smoothing parameters.  Blocks with
    a fixed value (random effects with a given variance) use it; missing
    ones are chosen by K-fold cross-validation over events.
    """
    config = config or OptimizerConfig()
    nu = dict(nu or {})
    for b in mm.blocks:
        if b.penalized and b.label not in nu and b.nu_fixed is not None:
            nu[b.label] = b.nu_fixed
    free = [b.label for b in mm.blocks if b.penalized and b.label not in nu]
    if free:
        nu = select_nu(mm, nu, free, config, folds=folds, seed=cv_seed, passes=passes)
    P = penalty_matrix(mm, nu)
    theta0 = np.zeros(mm.n_params) if theta0 is None else np.asarray(theta0, float)
    trace = []
    if config.method == "newton":
        theta, its, conv, sep, msg = newton(Objective(mm, P), theta0, config, trace)
    else:
        theta, its, conv, sep, msg = adam(mm, P, theta0, config, trace)
    res = _finish(mm, theta, nu, P, its, conv, sep, msg, config.method)
    res.history = trace
    if not res.converged:
        warnings.warn(f"fit did not converge: {res.message}")
    return res


def _fold_ids(n, folds, seed):
    rng = np.random.default_rng(seed)
    ids = np.empty(n, dtype=np.int64)
    ids[rng.permutation(n)] = np.arange(n) % folds
    return ids


def cv_score(mm, nu, folds, fold_ids, config, warm=None):
    """Held-out log-likelihood summed over folds (higher is better)."""
    total = 0.0
    P = penalty_matrix(mm, nu)
    quick = OptimizerConfig(tol=max(config.tol, 1e-6), max_iter=50)
    for f in range(folds):
        train = mm.subset(np.nonzero(fold_ids != f)[0])
        test = mm.subset(np.nonzero(fold_ids == f)[0])
        start = np.zeros(mm.n_params) if warm is None or warm.get(f) is None else warm[f]
        try:
            theta, _, _, sep, _ = newton(Objective(train, P), start, quick)
        except FitError:
            return -np.inf
        if warm is not None:
            warm[f] = theta
        total += float(unit_logliks(test, theta).sum())
    return total


def select_nu(mm, nu, free, config, folds=5, seed=0, grid=NU_GRID, passes=1, golden_iter=10):
    """Coordinate-wise CV choice of nu over a log grid, then golden-section refinement."""
    nu = dict(nu)
    folds = min(folds, mm.n_units)
    if folds < 2:
        raise FitError("cross-validation needs at least two events")
    ids = _fold_ids(mm.n_units, folds, seed)
    for label in free:
        nu.setdefault(label, 1.0)
    warm = {}
    cache = {}

    def score(label, log_nu):
        trial = dict(nu)
        trial[label] = 10.0 ** log_nu
        key = tuple(sorted((k, round(math.log10(v), 12)) for k, v in trial.items()))
        if key not in cache:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                cache[key] = cv_score(mm, trial, folds, ids, config, warm)
        return cache[key]

    logs = np.log10(grid)
    for _ in range(passes):
        for label in free:
            vals = [score(label, g) for g in logs]
            k = int(np.argmax(vals))
            lo = logs[max(k - 1, 0)]
            hi = logs[min(k + 1, len(logs) - 1)]
            best_x, best_v = logs[k], vals[k]
            gr = (math.sqrt(5) - 1) / 2
            a, b = lo, hi
            c = b - gr * (b - a)
            d = a + gr * (b - a)
            fc, fd = score(label, c), score(label, d)
            for _ in range(golden_iter):
                if fc >= fd:
                    b, d, fd = d, c, fc
                    c = b - gr * (b - a)
                    fc = score(label, c)
                else:
                    a, c, fc = c, d, fd
                    d = a + gr * (b - a)
                    fd = score(label, d)
            for x, v in ((c, fc), (d, fd)):
                if v > best_v:
                    best_x, best_v = x, v
            nu[label] = 10.0 ** best_x
    return nu


def standard_errors(fit_result):
    """Standard errors of a fit (sandwich form when penalized)."""
    return fit_result.se.copy()


def term_grid(fit_result, label, grid=None, n=100):
    """Fitted smooth term on a grid with pointwise standard errors.

    Returns {"x": [...], "fit": [...], "se": [...]} for smooth and
    time-varying terms and {"level": [...], "fit": [...], "se": [...]} for
    random effects.
    """
    b = fit_result.block(label)
    th = fit_result.theta[b.cols]
    V = fit_result.cov[b.cols, b.cols]
    if b.term is None or b.term.kind == "linear":
        raise FitError(f"{label} is not a smooth term")
    if b.term.kind == "re":
        return {"level": [str(v) for v in b.levels], "fit": th.tolist(),
                "se": np.sqrt(np.diag(V)).tolist()}
    if grid is None:
        lo, hi = b.basis.range
        grid = np.linspace(lo, hi, n)
    grid = np.asarray(grid, dtype=float)
    if b.term.kind == "tve":
        B = b.basis.coefficient_basis(grid)
    else:
        B = b.basis.transform(grid, quiet=True) - b.basis.center
    f = B @ th
    se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", B, V, B), 0.0, None))
    return {"x": grid.tolist(), "fit": f.tolist(), "se": se.tolist()}


def require_converged(fit_result):
    if not fit_result.converged:
        raise ConvergenceError(fit_result.message)
