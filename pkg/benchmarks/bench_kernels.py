"""Time the numba kernels against their numpy counterparts.

    python3 benchmarks/bench_kernels.py [--n 6] [--repeat 5]

Also times one forward-sensitivity Jacobian with each backend bound.
"""

import argparse
import time

import numpy as np

from lindlearn import _kernels as K
from lindlearn.learning import SimConfig, residuals_and_jacobian_forward
from lindlearn.harness.verify import small_dataset


def best_of(f, repeat):
    f()  # warm-up (JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        f()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, rng):
    d = 2**n
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    batch = rng.normal(size=(32, d, d)) + 1j * rng.normal(size=(32, d, d))
    om = rng.normal(size=(n, 2, 2, 2, 2)) + 1j * rng.normal(size=(n, 2, 2, 2, 2))
    active = np.ones(n, dtype=bool)
    U = rng.normal(size=(2, 2)) + 0j
    T = 60
    idx = rng.integers(0, 20, size=T).astype(np.int64)
    coef = rng.normal(size=T) + 0j
    nf = rng.integers(1, 3, size=T).astype(np.int64)
    sites = np.array([rng.choice(n, 2, replace=False) for _ in range(T)], dtype=np.int64)
    sites[nf == 1, 1] = sites[nf == 1, 0]
    mats = rng.normal(size=(T, 2, 2, 2)) + 0j
    psi = rng.normal(size=(256, d)) + 0j
    S = rng.normal(size=(d, d)) + 0j
    V = rng.normal(size=(n, d, d)) + 0j
    dW = rng.normal(size=(256, n))
    return {
        "lmul_site": (X, U, n // 2, n),
        "dissipate": (batch, om, active, n),
        "lmul_terms": (X, idx, coef, nf, sites, mats, 20, n),
        "trace_terms": (X, idx, coef, nf, sites, mats, 20, n),
        "reduced_product": (X, X, n // 2, n),
        "sse_first": (psi, S, V, dW),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8}")
    for name, a in cases(args.n, rng).items():
        t_np = best_of(lambda: getattr(K, name + "_np")(*a), args.repeat)
        t_nb = best_of(lambda: getattr(K, name + "_nb")(*a), args.repeat)
        print(f"{name:<16} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:8.1f}")
    theta, ds, sim = small_dataset("pauli_jump", n=min(args.n, 4), n_times=3, sim=SimConfig(2, 0.05))
    row = []
    for use in (False, True):
        K._bind(use)
        row.append(best_of(lambda: residuals_and_jacobian_forward(theta, ds, sim), max(1, args.repeat // 2)))
    K._bind(K.USE_NUMBA)
    print(f"{'jacobian(fwd)':<16} {1e3 * row[0]:11.3f} {1e3 * row[1]:11.3f} {row[0] / row[1]:8.1f}")


if __name__ == "__main__":
    main()
