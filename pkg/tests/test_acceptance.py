"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed in the terminal summary by the hook in conftest.py.
Run just this gate with ``pytest tests/test_acceptance.py -m acceptance``.
"""
import time

import numpy as np
import pytest

from mlmc_nac import oracle
from mlmc_nac.actor_critic import (CriticState, OracleProbe, critic_limited_floor, critic_subroutine,
                                   derive_hyperparameters, mlmc_nac, npg_subroutine, smoothness_estimate)
from mlmc_nac.harness import fit_power_law, validate_linrec, validate_mlmc
from mlmc_nac.mdp import (TabularMdp, empty_features, fourier_features, generate_random_ergodic, make_rng,
                          reduced_one_hot_features)
from mlmc_nac.policy import PolicyClass

pytestmark = pytest.mark.acceptance


def fd_gradient(mdp, theta, pc, eps=1e-6):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = eps
        g[i] = (oracle.gain(mdp, theta + e, pc) - oracle.gain(mdp, theta - e, pc)) / (2 * eps)
    return g


def test_criterion_1_oracle_consistency(acceptance_record):
    t0 = time.perf_counter()
    rng = make_rng(2024)
    worst = dict(bellman=0.0, centering=0.0, eta=0.0, grad=0.0)
    for i in range(25):
        S, A = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        mdp = generate_random_ergodic(S, A, seed=i)
        pc = PolicyClass.tabular(S, A)
        theta = rng.normal(size=pc.dim)
        pi = pc.probs_table(theta)
        ev = oracle.evaluate_policy(mdp, pi)
        P, r = mdp.induced_chain(pi), mdp.induced_reward(pi)
        resid_v = ev.v + ev.gain - r - P @ ev.v
        resid_q = ev.q - (mdp.reward - ev.gain + mdp.transition @ ev.v)
        worst["bellman"] = max(worst["bellman"], np.abs(resid_v).max(), np.abs(resid_q).max())
        worst["centering"] = max(worst["centering"], abs(ev.stationary @ ev.v))
        feats = fourier_features(S) if S > 2 else reduced_one_hot_features(S)
        xi, _, _ = oracle.td_fixed_point(mdp, theta, feats, 1.0, pc)
        worst["eta"] = max(worst["eta"], abs(xi[0] - ev.gain))
        g = oracle.exact_policy_gradient(mdp, theta, pc)
        fd = fd_gradient(mdp, theta, pc)
        worst["grad"] = max(worst["grad"], np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-12))
    elapsed = time.perf_counter() - t0
    ok = (worst["bellman"] <= 1e-10 and worst["centering"] <= 1e-10 and worst["eta"] <= 1e-10
          and worst["grad"] <= 1e-5 and elapsed < 30)
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items()) + f", {elapsed:.1f}s"
    acceptance_record(1, "oracle self-consistency", ok, detail)
    assert ok, detail


def test_criterion_2_critic_positive_definite(acceptance_record):
    t0 = time.perf_counter()
    rng = make_rng(7)
    margins, seen, i = [], 0, 0
    while seen < 25:
        S = int(rng.integers(3, 9))
        mdp = generate_random_ergodic(S, int(rng.integers(2, 5)), seed=500 + i)
        i += 1
        feats = fourier_features(S, int(rng.integers(1, (S - 1) // 2 + 1))) if i % 2 else reduced_one_hot_features(S)
        pc = PolicyClass.tabular(S, mdp.n_actions)
        pi = pc.probs_table(rng.normal(size=pc.dim))
        lam = oracle.critic_lambda(mdp, pi, feats)
        if lam <= 0:
            continue
        seen += 1
        A, _ = oracle.critic_moments(mdp, pi, feats, oracle.c_beta_threshold(lam))
        margins.append(np.linalg.eigvalsh(0.5 * (A + A.T)).min() - lam / 2)
    elapsed = time.perf_counter() - t0
    ok = min(margins) >= -1e-10 and elapsed < 10
    detail = f"min(eig - lambda/2)={min(margins):.3e} over {seen} instances ({i} drawn), {elapsed:.1f}s"
    acceptance_record(2, "critic matrix positive definite at threshold c_beta", ok, detail)
    assert ok, detail


@pytest.fixture(scope="module")
def mlmc_checks():
    t0 = time.perf_counter()
    checks = validate_mlmc(t_max_list=(8, 16, 32), reps=100_000, draws=1_000_000, seed=0)
    return checks, time.perf_counter() - t0


def test_criterion_3_telescoping(acceptance_record, mlmc_checks):
    checks, elapsed = mlmc_checks
    tele = [c for c in checks if c.name.startswith("telescoping")]
    ok = all(c.passed for c in tele) and elapsed < 120
    worst = max(abs(c.measured) / c.tolerance * 3 for c in tele)
    detail = f"{len(tele)} components, worst |diff| = {worst:.2f} standard errors, {elapsed:.1f}s (shared with 4)"
    acceptance_record(3, "MLMC telescoping vs full batch", ok, detail)
    assert ok, "\n".join(c.line() for c in tele if not c.passed)


def test_criterion_4_sample_cost(acceptance_record, mlmc_checks):
    checks, elapsed = mlmc_checks
    cost = [c for c in checks if c.name.startswith("sample cost")]
    ok = all(c.passed for c in cost) and elapsed < 120
    detail = "; ".join(f"{c.name.split()[-1]} {c.measured:.4f} vs {c.expected:.4f}" for c in cost)
    acceptance_record(4, "MLMC expected sample cost", ok, detail)
    assert ok, detail


def test_criterion_5_linear_recursion(acceptance_record):
    t0 = time.perf_counter()
    checks = validate_linrec(seed=0, replicas=200)
    elapsed = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and elapsed < 300
    detail = "; ".join(f"{c.name} {c.measured:.4g}" for c in checks) + f", {elapsed:.1f}s"
    acceptance_record(5, "linear recursion regimes", ok, detail)
    assert ok, "\n".join(c.line() for c in checks)


def test_criterion_6_critic_rate(acceptance_record):
    t0 = time.perf_counter()
    # the instance with the largest critic lambda among generator seeds 0..199
    mdp = generate_random_ergodic(5, 2, self_loop_min=0.01, seed=72)
    feats = fourier_features(5)
    pc = PolicyClass.tabular(5, 2)
    theta = np.zeros(pc.dim)
    rep = oracle.assumption_report(mdp, theta, feats, pc)
    grid = [2**j for j in range(6, 13)]
    med, bias = [], []
    for H in grid:
        hp = derive_hyperparameters(None, rep, {"alpha": 0.1}, k_outer=1, h_inner=H)
        xi_star, _, _ = oracle.td_fixed_point(mdp, theta, feats, hp.c_beta, pc)
        finals = np.array([critic_subroutine(mdp, pc, theta, CriticState.zeros(feats.dim), hp, 0,
                                             make_rng(1000 * H + s), feats)[0].xi for s in range(50)])
        med.append(float(np.median(np.sum((finals - xi_star) ** 2, axis=1))))
        bias.append(float(np.sum((finals.mean(axis=0) - xi_star) ** 2)))
    s_med, s_bias = fit_power_law(grid, med).slope, fit_power_law(grid, bias).slope
    elapsed = time.perf_counter() - t0
    ok = s_med <= -0.8 and s_bias <= -1.2 and elapsed < 600
    detail = f"median slope {s_med:.3f} (<= -0.8), bias slope {s_bias:.3f} (<= -1.2), {elapsed:.1f}s"
    acceptance_record(6, "critic rate", ok, detail)
    assert ok, detail


def test_criterion_7_npg_accuracy(acceptance_record):
    t0 = time.perf_counter()
    feats = reduced_one_hot_features(4)
    pc = PolicyClass.tabular(4, 2)
    theta = np.zeros(pc.dim)
    parts, ok = [], True
    for mseed in range(3):
        mdp = generate_random_ergodic(4, 2, seed=mseed)
        rep = oracle.assumption_report(mdp, theta, feats, pc)
        xi_star, _, _ = oracle.td_fixed_point(mdp, theta, feats, rep.c_beta_threshold, pc)
        w_star = oracle.exact_npg(mdp, theta, pc)
        tol = 0.15 * (1 + np.linalg.norm(w_star))
        biases = []
        for H in (2**8, 2**10, 2**12):
            hp = derive_hyperparameters(None, rep, {"alpha": 0.1}, k_outer=1, h_inner=H)
            W = np.array([npg_subroutine(mdp, pc, theta, xi_star, np.zeros(pc.dim), hp, 0,
                                         make_rng(10**6 * mseed + 1000 * H + s), feats)[0] for s in range(200)])
            biases.append(float(np.linalg.norm(W.mean(axis=0) - w_star)))
        median = float(np.median(np.linalg.norm(W[:20] - w_star, axis=1)))
        decreasing = all(a > b for a, b in zip(biases, biases[1:]))
        ok &= median <= tol and decreasing
        parts.append(f"mdp{mseed} median {median:.3f}/{tol:.3f} bias " + ">".join(f"{b:.3f}" for b in biases))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 600
    detail = "; ".join(parts) + f", {elapsed:.1f}s"
    acceptance_record(7, "NPG accuracy with oracle critic", ok, detail)
    assert ok, detail


def test_criterion_8_end_to_end(acceptance_record):
    t0 = time.perf_counter()
    # largest critic lambda among generator seeds 0..99 with self_loop_min 0.05
    mdp = generate_random_ergodic(4, 2, self_loop_min=0.05, seed=70)
    feats = reduced_one_hot_features(4)
    pc = PolicyClass.tabular(4, 2)
    theta0 = np.zeros(pc.dim)
    rep = oracle.assumption_report(mdp, theta0, feats, pc)
    # the theorem constants make the steps unstable at this scale, see the decisions ledger
    overrides = {"lambda": 1.0, "mu": 1.0, "alpha": 1.0}
    budgets = (2**14, 2**16, 2**18)
    avg, final, initial = [], [], []
    for T in budgets:
        hp = derive_hyperparameters(T, rep, overrides)
        probes = OracleProbe(mdp, pc, feats, hp.c_beta)
        runs = [mlmc_nac(mdp, pc, theta0, feats, hp, make_rng(s), probes, record_wall_time=False) for s in range(20)]
        avg.append(float(np.median([r.column("gap").mean() for r in runs])))
        initial.append(float(np.median([r.column("gap")[0] for r in runs])))
        final.append(float(np.median([probes.J_star - oracle.gain(mdp, r.final_theta, pc) for r in runs])))
    floor = critic_limited_floor(mdp, pc, feats, theta0, hp.alpha, hp.c_beta)
    slope = fit_power_law(budgets, avg, floor_subtract=floor).slope
    elapsed = time.perf_counter() - t0
    ok = slope <= -0.3 and final[-1] <= initial[-1] / 4 and elapsed < 1800
    detail = (f"eps_app={rep.eps_app:.2e}, floor={floor:.2e}, avg gap " + ", ".join(f"{g:.4f}" for g in avg)
              + f", slope {slope:.3f} (<= -0.3), final {final[-1]:.4f} vs initial/4 {initial[-1] / 4:.4f}"
              + f", {elapsed:.1f}s")
    acceptance_record(8, "end-to-end optimality gap trend", ok, detail)
    assert ok, detail


def test_criterion_9_bandit(acceptance_record):
    t0 = time.perf_counter()
    mdp = TabularMdp(1, 2, np.array([[1.0, 0.0]]), np.ones((1, 2, 1)), np.ones(1))
    feats = empty_features(1)
    pc = PolicyClass.tabular(1, 2)
    theta0 = np.zeros(1)
    rep = oracle.assumption_report(mdp, theta0, feats, pc)
    hp = derive_hyperparameters(None, rep, None, k_outer=64, h_inner=64,
                                smoothness=lambda: smoothness_estimate(mdp, pc, theta0))
    finals = [oracle.gain(mdp, mlmc_nac(mdp, pc, theta0, feats, hp, make_rng(s)).final_theta, pc) for s in range(20)]
    med = float(np.median(finals))
    elapsed = time.perf_counter() - t0
    ok = med >= 0.95 and elapsed < 60
    detail = f"median final J {med:.5f} (>= 0.95), {elapsed:.1f}s"
    acceptance_record(9, "bandit sanity", ok, detail)
    assert ok, detail
