"""Backend selection for the hot kernels.

The compiled module is used when it imports; otherwise the numpy fallback.
``use_backend`` switches explicitly, which the tests and benchmark rely on.
"""

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # not built
    _compiled = None

_active = _compiled if _compiled is not None else _fallback


def available_backends():
    return ["compiled", "python"] if _compiled is not None else ["python"]


def backend():
    """Name of the active backend."""
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def use_backend(name):
    """Select ``"compiled"`` or ``"python"``; returns the previous name."""
    global _active
    prev = backend()
    if name == "python":
        _active = _fallback
    elif name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not available in this install")
        _active = _compiled
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def _ints(a):
    return np.ascontiguousarray(a, dtype=np.int_)


def _floats(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sweep(ev_s, ev_r, ev_t, ev_w, n_send, n_recv, q_s, q_r, q_t,
          mech, block, hl, halflives=(), cap=np.inf, closure=False):
    """Feature matrix for time-sorted queries; see ``_fallback.sweep``."""
    q_t = _floats(q_t)
    mech = _ints(mech)
    if not closure and np.any((mech == _fallback.TRANSITIVE) | (mech == _fallback.CYCLIC)):
        raise ValueError("closure mechanisms need closure=True")
    if len(q_t) > 1 and np.any(np.diff(q_t) < 0):
        raise ValueError("queries must be sorted by time")
    return _active.sweep(_ints(ev_s), _ints(ev_r), _floats(ev_t), _floats(ev_w),
                         int(n_send), int(n_recv), _ints(q_s), _ints(q_r), q_t,
                         _ints(mech), _ints(block), _ints(hl), _floats(halflives),
                         float(cap), bool(closure))


def grouped_loglik(X, offsets, case_rows, theta, want_hess=True):
    return _active.grouped_loglik(_floats(X), _ints(offsets), _ints(case_rows),
                                  _floats(theta), bool(want_hess))


def grouped_expectation(X, offsets, theta):
    return _active.grouped_expectation(_floats(X), _ints(offsets), _floats(theta))
