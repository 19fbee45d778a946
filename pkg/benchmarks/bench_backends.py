"""Time the compiled and pure-numpy inner loops on the same workload.

    python3 benchmarks/bench_backends.py [--h 1024] [--repeat 3]

Both backends consume the same random stream, so the script also checks that
they land on the same iterate.
"""
import argparse
import time

import numpy as np

from mlmc_nac.actor_critic import CriticState, critic_subroutine, derive_hyperparameters, npg_subroutine
from mlmc_nac.mdp import fourier_features, generate_random_ergodic, make_rng
from mlmc_nac.oracle import assumption_report
from mlmc_nac.policy import PolicyClass


def workload(backend, mdp, pc, feat, hp, seed):
    theta = np.zeros(pc.dim)
    xi, s, n1 = critic_subroutine(mdp, pc, theta, CriticState.zeros(feat.dim), hp, 0, make_rng(seed), feat, backend)
    omega, _, n2 = npg_subroutine(mdp, pc, theta, xi, np.zeros(pc.dim), hp, s, make_rng(seed + 1), feat, backend)
    return np.concatenate([xi.xi, omega]), n1 + n2


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--h", type=int, default=1024)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    mdp = generate_random_ergodic(8, 3, seed=1)
    feat = fourier_features(8, 2)
    pc = PolicyClass.tabular(8, 3)
    rep = assumption_report(mdp, np.zeros(pc.dim), feat, pc)
    hp = derive_hyperparameters(None, rep, {"beta": 0.05, "gamma": 0.05, "alpha": 0.1}, k_outer=1, h_inner=args.h)
    workload("numba", mdp, pc, feat, hp, 0)  # compile outside the timed region

    results = {}
    for backend in ("numba", "numpy"):
        times = []
        for r in range(args.repeat):
            t0 = time.perf_counter()
            x, n = workload(backend, mdp, pc, feat, hp, 100 + r)
            times.append(time.perf_counter() - t0)
        results[backend] = (min(times), n, x)
        print(f"{backend:>6}: best {min(times) * 1e3:9.2f} ms  ({n} transitions, {n / min(times):,.0f} per s)")
    same = np.allclose(results["numba"][2], results["numpy"][2], rtol=1e-9, atol=1e-12)
    print(f"speedup {results['numpy'][0] / results['numba'][0]:.1f}x, identical iterates: {same}")


if __name__ == "__main__":
    main()
