"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--events 2000] [--nodes 37] [--repeat 3]

Both backends run the same statistic sweep (full risk set at every event,
all seven mechanisms in volume form) and the grouped log-likelihood with
its Hessian.  Results are checked for agreement before timings are shown.
"""

import argparse
import time

import numpy as np

from remkit import kernels


def workload(n_events, n_nodes, seed):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, n_nodes, n_events)
    r = (s + rng.integers(1, n_nodes, n_events)) % n_nodes
    t = np.sort(rng.uniform(0, 100, n_events))
    w = np.ones(n_events)
    qs, qr = np.divmod(np.arange(n_nodes * n_nodes), n_nodes)
    keep = qs != qr
    qs, qr = qs[keep], qr[keep]
    pick = np.linspace(0, n_events - 1, 50).astype(int)
    Q = len(qs)
    q_t = np.repeat(t[pick], Q)
    return dict(ev_s=s, ev_r=r, ev_t=t, ev_w=w, n_send=n_nodes, n_recv=n_nodes,
                q_s=np.tile(qs, len(pick)), q_r=np.tile(qr, len(pick)), q_t=q_t,
                mech=np.arange(6), block=np.ones(6, int), hl=np.full(6, -1), closure=True), Q, len(pick)


def timed(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--events", type=int, default=2000)
    ap.add_argument("--nodes", type=int, default=37)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if "compiled" not in kernels.available_backends():
        print("compiled kernels not built; only the fallback is available")
    work, Q, n_units = workload(args.events, args.nodes, args.seed)
    rng = np.random.default_rng(args.seed + 1)
    X = rng.normal(size=(Q * n_units, 6))
    offsets = np.arange(0, Q * n_units + 1, Q)
    case_rows = offsets[:-1] + rng.integers(0, Q, n_units)
    theta = rng.normal(scale=0.1, size=6)

    results = {}
    for name in kernels.available_backends():
        prev = kernels.use_backend(name)
        try:
            ts, H = timed(lambda: kernels.sweep(**work), args.repeat)
            tl, L = timed(lambda: kernels.grouped_loglik(X, offsets, case_rows, theta), args.repeat)
        finally:
            kernels.use_backend(prev)
        results[name] = (ts, tl, H, L)
        print(f"{name:9s} sweep {ts * 1e3:9.2f} ms   loglik+hessian {tl * 1e3:9.2f} ms")
    if len(results) == 2:
        Hc, Hp = results["compiled"][2], results["python"][2]
        Lc, Lp = results["compiled"][3], results["python"][3]
        assert np.allclose(Hc, Hp, rtol=1e-12, atol=1e-12)
        assert np.isclose(Lc[0], Lp[0], rtol=1e-12)
        print(f"speed-up  sweep x{results['python'][0] / results['compiled'][0]:.1f}   "
              f"loglik x{results['python'][1] / results['compiled'][1]:.1f}")


if __name__ == "__main__":
    main()
