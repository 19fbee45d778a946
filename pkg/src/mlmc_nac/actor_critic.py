"""The multi-level Monte Carlo natural actor-critic loop and its two inner subroutines."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels, oracle
from .backend import resolve
from .errors import ConfigError, DivergenceError
from .linrec import DIVERGENCE_NORM, RecursionSpec, run_recursion
from .mdp import FeatureMap, TabularMdp, inverse_cdf
from .mlmc import UStat, VStat, check_t_max, mlmc_assemble, policy_cdf
from .policy import PolicyClass, actor_update


@dataclass(frozen=True)
class CriticState:
    eta: float
    zeta: np.ndarray

    @property
    def xi(self) -> np.ndarray:
        return np.concatenate([[self.eta], np.asarray(self.zeta, dtype=float)])

    @classmethod
    def from_vector(cls, xi):
        xi = np.asarray(xi, dtype=float)
        return cls(float(xi[0]), xi[1:].copy())

    @classmethod
    def zeros(cls, m):
        return cls(0.0, np.zeros(m))


@dataclass(frozen=True)
class HyperParams:
    alpha: float
    beta: float
    gamma: float
    c_beta: float
    t_max: int
    h_inner: int
    k_outer: int

    def __post_init__(self):
        check_t_max(self.t_max)
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and non-negative, got {v}")
        if not (np.isfinite(self.c_beta) and self.c_beta > 0):
            raise ConfigError(f"c_beta must be finite and positive, got {self.c_beta}")
        if self.h_inner < 1 or self.k_outer < 0:
            raise ConfigError("h_inner must be >= 1 and k_outer >= 0")

    @property
    def levels(self) -> int:
        return self.t_max.bit_length() - 1


_DUMMY_SCORE = np.zeros((1, 1, 1))
_DUMMY_XI = np.zeros(1)


# ---------------------------------------------------------------------------
# inner loops

def critic_subroutine(mdp: TabularMdp, pclass: PolicyClass, theta, xi_init, hp: HyperParams,
                      s0: int, rng: np.random.Generator, features: FeatureMap, backend=None):
    """H steps of xi <- xi - beta (A_v^MLMC xi - b_v^MLMC) along one continuing trajectory.

    Returns (CriticState, final_state, transitions_used).
    """
    xi0 = xi_init.xi if isinstance(xi_init, CriticState) else np.asarray(xi_init, dtype=float)
    if xi0.shape != (features.dim + 1,):
        raise ValueError(f"xi has shape {xi0.shape}, expected ({features.dim + 1},)")
    pi_cdf = policy_cdf(pclass, theta)
    if resolve(backend) == "numba":
        xi, s, used, bad = kernels.mlmc_recursion(
            kernels.CRITIC_DIRECTION, pi_cdf, mdp.transition_cdf, mdp.reward,
            np.ascontiguousarray(features.table), _DUMMY_SCORE, _DUMMY_XI, float(hp.c_beta),
            float(hp.beta), hp.h_inner, hp.levels, int(s0), xi0, rng, DIVERGENCE_NORM)
        if bad >= 0:
            raise DivergenceError(bad, f"critic recursion diverged at step {bad}")
        return CriticState.from_vector(xi), int(s), int(used)

    stat = VStat(hp.c_beta, features)
    walk = _Walk(mdp, pclass, theta, s0, hp.t_max, rng, stat, pi_cdf)
    try:
        diag = run_recursion(RecursionSpec(hp.h_inner, hp.beta, walk, xi0))
    except DivergenceError as exc:
        raise DivergenceError(exc.step, f"critic recursion diverged at step {exc.step}") from None
    return CriticState.from_vector(diag.final), walk.state, walk.used


def npg_subroutine(mdp: TabularMdp, pclass: PolicyClass, theta, xi, omega_init, hp: HyperParams,
                   s0: int, rng: np.random.Generator, features: FeatureMap, backend=None):
    """H steps of omega <- omega - gamma (F^MLMC omega - g^MLMC) with the critic held at ``xi``.

    Returns (omega, final_state, transitions_used).
    """
    xi = xi.xi if isinstance(xi, CriticState) else np.asarray(xi, dtype=float)
    omega0 = np.asarray(omega_init, dtype=float)
    if omega0.shape != (pclass.dim,):
        raise ValueError(f"omega has shape {omega0.shape}, expected ({pclass.dim},)")
    pi_cdf = policy_cdf(pclass, theta)
    score_table = np.ascontiguousarray(pclass.score_table(theta))
    if resolve(backend) == "numba":
        omega, s, used, bad = kernels.mlmc_recursion(
            kernels.NPG_DIRECTION, pi_cdf, mdp.transition_cdf, mdp.reward,
            np.ascontiguousarray(features.table), score_table, xi, 1.0,
            float(hp.gamma), hp.h_inner, hp.levels, int(s0), omega0, rng, DIVERGENCE_NORM)
        if bad >= 0:
            raise DivergenceError(bad, f"NPG recursion diverged at step {bad}")
        return omega, int(s), int(used)

    walk = _Walk(mdp, pclass, theta, s0, hp.t_max, rng, UStat(score_table, xi, features), pi_cdf)
    try:
        diag = run_recursion(RecursionSpec(hp.h_inner, hp.gamma, walk, omega0))
    except DivergenceError as exc:
        raise DivergenceError(exc.step, f"NPG recursion diverged at step {exc.step}") from None
    return diag.final, walk.state, walk.used


class _Walk:
    """Estimator source for run_recursion: one MLMC assembly per call, state carried over."""

    def __init__(self, mdp, pclass, theta, s0, t_max, rng, stat, pi_cdf):
        self.mdp, self.pclass, self.theta = mdp, pclass, theta
        self.state, self.used = int(s0), 0
        self.t_max, self.rng, self.stat, self.pi_cdf = t_max, rng, stat, pi_cdf

    def __call__(self, h):
        est = mlmc_assemble(self.stat, self.mdp, self.pclass, self.theta, self.state,
                            self.t_max, self.rng, pi_cdf=self.pi_cdf)
        self.state = est.final_state
        self.used += est.transitions_used
        return est.a_hat, est.b_hat


# ---------------------------------------------------------------------------
# hyperparameters

def next_pow2(x: float) -> int:
    return 1 << max(0, math.ceil(math.log2(max(x, 1.0))))


def smoothness_estimate(mdp: TabularMdp, pclass: PolicyClass, theta0, n_pairs=100, radius=1.0,
                        spacing=1e-3, seed=0) -> float:
    """Largest ||grad J(t1) - grad J(t2)|| / ||t1 - t2|| over random nearby pairs in a ball."""
    rng = np.random.Generator(np.random.Philox(seed))
    theta0 = np.asarray(theta0, dtype=float)
    d = theta0.shape[0]
    best = 0.0
    for _ in range(n_pairs):
        u = rng.standard_normal(d)
        center = theta0 + radius * rng.random() ** (1.0 / d) * u / np.linalg.norm(u)
        v = rng.standard_normal(d)
        other = center + spacing * v / np.linalg.norm(v)
        g1 = oracle.exact_policy_gradient(mdp, center, pclass)
        g2 = oracle.exact_policy_gradient(mdp, other, pclass)
        best = max(best, float(np.linalg.norm(g1 - g2) / np.linalg.norm(center - other)))
    return best


_OVERRIDE_KEYS = {"alpha", "beta", "gamma", "c_beta", "t_max", "lambda", "mu", "g1", "L"}


def derive_hyperparameters(T_budget, oracle_report, overrides=None, *, k_outer=None, h_inner=None,
                           smoothness=None) -> HyperParams:
    """Step sizes and loop lengths from the convergence theory.

    K = round(sqrt(T)), H = next power of two >= sqrt(T)/ln T, T_max = H^2,
    beta = 4 ln H/(lambda H), gamma = 2 ln H/(mu H), c_beta >= the PD threshold
    and alpha = mu^2/(4 G1^2 L). ``smoothness`` is a zero-argument callable
    returning L, used only when L is not overridden.
    """
    ov = dict(overrides or {})
    unknown = set(ov) - _OVERRIDE_KEYS
    if unknown:
        raise ConfigError(f"unknown hyperparameter override(s): {sorted(unknown)}")
    if T_budget is not None:
        if k_outer is not None or h_inner is not None:
            raise ConfigError("give either T_budget or (K, H), not both")
        if T_budget < 3:
            raise ConfigError("T_budget must be >= 3")
        K = int(round(math.sqrt(T_budget)))
        H = next_pow2(math.sqrt(T_budget) / math.log(T_budget))
    else:
        if k_outer is None or h_inner is None:
            raise ConfigError("need T_budget or both K and H")
        K, H = int(k_outer), int(h_inner)
    if H < 2:
        H = 2
    t_max = int(ov["t_max"]) if "t_max" in ov else next_pow2(H * H)

    def constant(key, value, label):
        v = ov.get(key, value)
        if v is None or not np.isfinite(v) or v <= 0:
            raise ConfigError(f"{label} is not available (got {v}); supply an override for '{key}'")
        return float(v)

    lam = constant("lambda", oracle_report.lambda_min if oracle_report else None, "lambda (critic PD constant)")
    mu = constant("mu", oracle_report.mu_min if oracle_report else None, "mu (Fisher lower bound)")
    log_h = math.log(H)
    beta = float(ov.get("beta", 4.0 * log_h / (lam * H)))
    gamma = float(ov.get("gamma", 2.0 * log_h / (mu * H)))
    threshold = oracle.c_beta_threshold(lam)
    c_beta = max(float(ov["c_beta"]), threshold) if "c_beta" in ov else threshold
    if "alpha" in ov:
        alpha = float(ov["alpha"])
    else:
        g1 = constant("g1", oracle_report.g1_bound if oracle_report else None, "G1 (score bound)")
        L = ov.get("L")
        if L is None:
            if smoothness is None:
                raise ConfigError("L (smoothness of J) is not available; supply an override for 'L'")
            L = smoothness()
        L = constant("L", L, "L (smoothness of J)")
        alpha = mu**2 / (4.0 * g1**2 * L)
    return HyperParams(alpha, beta, gamma, c_beta, t_max, H, K)


# ---------------------------------------------------------------------------
# outer loop

@dataclass(frozen=True)
class EpochRecord:
    k: int
    cum_T: int
    J_theta: float
    gap: float
    xi_err: float
    omega_err: float
    epoch_transitions: int
    wall_ms: float


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    final_theta: np.ndarray | None = None
    J_star: float = float("nan")

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def average_gap(self) -> float:
        return float(np.nanmean(self.column("gap"))) if self.records else float("nan")


class OracleProbe:
    """Exact per-epoch quantities: J(theta), the optimality gap, xi* and omega*."""

    def __init__(self, mdp: TabularMdp, pclass: PolicyClass, features: FeatureMap, c_beta: float):
        self.mdp, self.pclass, self.features, self.c_beta = mdp, pclass, features, c_beta
        self.J_star, _ = oracle.optimal_gain(mdp)

    def __call__(self, theta):
        ev = oracle.evaluate_policy(self.mdp, self.pclass.probs_table(theta))
        xi_star, _, _ = oracle.td_fixed_point(self.mdp, theta, self.features, self.c_beta,
                                               self.pclass, ev)
        omega_star = oracle.exact_npg(self.mdp, theta, self.pclass, ev)
        return {"J": ev.gain, "gap": self.J_star - ev.gain, "xi_star": xi_star, "omega_star": omega_star}


def mlmc_nac(mdp: TabularMdp, pclass: PolicyClass, theta0, features: FeatureMap, hp: HyperParams,
             rng: np.random.Generator, probes=None, *, probe_every=1, warm_start=False,
             refresh=None, backend=None, record_wall_time=True, s0=None) -> RunTrace:
    """Run K epochs of critic estimation, NPG estimation and the actor step.

    ``probes(theta)`` returns exact quantities for the trace (see OracleProbe).
    ``refresh(theta, hp)`` may return updated hyperparameters at the start of an epoch.
    A single environment trajectory is threaded through every sub-trajectory.
    """
    theta = np.array(theta0, dtype=float)
    trace = RunTrace(J_star=getattr(probes, "J_star", float("nan")))
    if s0 is None:
        s0 = inverse_cdf(np.cumsum(mdp.initial_dist), rng.random())
    state = int(s0)
    cum_T = 0
    xi = CriticState.zeros(features.dim)
    for k in range(hp.k_outer):
        start = time.perf_counter()
        if refresh is not None:
            hp = refresh(theta, hp)
        trace.thetas.append(theta.copy())
        try:
            xi_init = xi if warm_start else CriticState.zeros(features.dim)
            xi, state, n_critic = critic_subroutine(mdp, pclass, theta, xi_init, hp, state, rng,
                                                    features, backend)
            omega, state, n_npg = npg_subroutine(mdp, pclass, theta, xi, np.zeros(pclass.dim), hp,
                                                 state, rng, features, backend)
        except DivergenceError as exc:
            trace.final_theta = theta.copy()
            raise DivergenceError(exc.step, f"epoch {k}: {exc}", trace) from None
        epoch_T = n_critic + n_npg
        cum_T += epoch_T
        J = gap = xi_err = omega_err = float("nan")
        if probes is not None and k % probe_every == 0:
            p = probes(theta)
            J, gap = p["J"], p["gap"]
            xi_err = float(np.linalg.norm(xi.xi - p["xi_star"]))
            omega_err = float(np.linalg.norm(omega - p["omega_star"]))
        theta = actor_update(theta, omega, hp.alpha)
        wall = (time.perf_counter() - start) * 1e3 if record_wall_time else 0.0
        trace.records.append(EpochRecord(k, cum_T, J, gap, xi_err, omega_err, epoch_T, wall))
    trace.final_theta = theta
    return trace


def refresher(mdp: TabularMdp, pclass: PolicyClass, features: FeatureMap, overrides=None):
    """Re-derive beta and gamma from the assumption constants at the current theta."""
    ov = dict(overrides or {})

    def refresh(theta, hp):
        rep = oracle.assumption_report(mdp, theta, features, pclass)
        lam = ov.get("lambda", rep.lambda_min)
        mu = ov.get("mu", rep.mu_min)
        log_h = math.log(hp.h_inner)
        beta = ov.get("beta", 4.0 * log_h / (lam * hp.h_inner))
        gamma = ov.get("gamma", 2.0 * log_h / (mu * hp.h_inner))
        return replace(hp, beta=float(beta), gamma=float(gamma))

    return refresh


def critic_limited_floor(mdp: TabularMdp, pclass: PolicyClass, features: FeatureMap, theta0, alpha: float,
                         c_beta: float, iters: int = 2000) -> float:
    """Gap left by the noise-free actor driven by the exact critic-limited NPG direction.

    This isolates the error coming from the critic's function class: with an
    exact advantage the iteration drives the gap to zero.
    """
    J_star, _ = oracle.optimal_gain(mdp)
    theta = np.array(theta0, dtype=float)
    for _ in range(iters):
        theta = actor_update(theta, oracle.critic_limited_npg(mdp, theta, pclass, features, c_beta), alpha)
    return max(0.0, J_star - oracle.gain(mdp, theta, pclass))
