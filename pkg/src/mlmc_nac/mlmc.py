"""Multi-level Monte Carlo estimation along a continuing Markov trajectory.

One assembly draws a level Q ~ Geom(1/2), rolls out 2^Q transitions (a single
transition when 2^Q exceeds ``t_max``) and returns

    Y^0 + 2^Q (Y^Q - Y^{Q-1})      (untruncated)
    Y^0                            (truncated)

where Y^j averages a per-transition statistic over the first 2^j transitions.
Random numbers are consumed in a fixed order (level, then action/next-state
uniforms per transition) which the compiled kernels reproduce exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import FeatureMap, TabularMdp, Transition
from .policy import PolicyClass


def check_t_max(t_max: int) -> int:
    t_max = int(t_max)
    if t_max < 2:
        raise ValueError(f"t_max must be >= 2, got {t_max}")
    if t_max & (t_max - 1):
        raise ValueError(f"t_max must be a power of 2, got {t_max}")
    return t_max.bit_length() - 1


@dataclass(frozen=True)
class LevelDraw:
    q: int
    truncated: bool
    planned_len: int


@dataclass(frozen=True, eq=False)
class MlmcEstimate:
    a_hat: np.ndarray
    b_hat: np.ndarray
    level: LevelDraw
    transitions_used: int
    final_state: int
    trajectory: tuple = ()


def draw_level(rng: np.random.Generator, t_max: int) -> LevelDraw:
    levels = check_t_max(t_max)
    q = int(rng.geometric(0.5))
    truncated = q > levels
    return LevelDraw(q, truncated, 1 if truncated else 1 << q)


def rollout(pi_cdf, p_cdf, s0, u):
    """Markov rollout driven by pre-drawn uniforms ``u`` of shape (n, 2)."""
    n = u.shape[0]
    states = np.empty(n, dtype=np.int64)
    actions = np.empty(n, dtype=np.int64)
    nexts = np.empty(n, dtype=np.int64)
    n_a, n_s = pi_cdf.shape[1], p_cdf.shape[2]
    s = int(s0)
    for t in range(n):
        a = min(int(np.searchsorted(pi_cdf[s], u[t, 0], side="right")), n_a - 1)
        s2 = min(int(np.searchsorted(p_cdf[s, a], u[t, 1], side="right")), n_s - 1)
        states[t], actions[t], nexts[t] = s, a, s2
        s = s2
    return states, actions, nexts


def policy_cdf(pclass: PolicyClass, theta) -> np.ndarray:
    return np.cumsum(pclass.probs_table(theta), axis=1)


def collect_trajectory(mdp: TabularMdp, pclass: PolicyClass, theta, s0: int, length: int,
                       rng: np.random.Generator, pi_cdf=None):
    """Roll out ``length`` transitions under pi_theta from ``s0``; return (transitions, final_state)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    pi_cdf = policy_cdf(pclass, theta) if pi_cdf is None else pi_cdf
    u = rng.random((length, 2))
    st, ac, nx = rollout(pi_cdf, mdp.transition_cdf, s0, u)
    r = mdp.reward[st, ac]
    traj = [Transition(int(s), int(a), int(s2), float(rr)) for s, a, s2, rr in zip(st, ac, nx, r)]
    return traj, int(nx[-1])


# ---------------------------------------------------------------------------
# per-transition statistics

def u_stat(pclass: PolicyClass, theta, xi, omega, z: Transition, features: FeatureMap,
           score_table=None):
    """(score score^T, A_hat(xi, z) score) for the NPG recursion; omega is unused
    because the crude gradient a_term @ omega - b_term is linear in it."""
    psi = (pclass.score_table(theta) if score_table is None else score_table)[z.s, z.a]
    phi = features.table
    adv = z.reward - xi[0] + xi[1:] @ (phi[z.s_next] - phi[z.s])
    return np.outer(psi, psi), adv * psi


def v_stat(xi, z: Transition, c_beta: float, features: FeatureMap):
    """(A_v(z), b_v(z)) for the average-reward/critic recursion; xi is unused for the same reason."""
    phi = features.table
    m = phi.shape[1]
    a = np.zeros((m + 1, m + 1))
    a[0, 0] = c_beta
    a[1:, 0] = phi[z.s]
    a[1:, 1:] = np.outer(phi[z.s], phi[z.s] - phi[z.s_next])
    b = np.empty(m + 1)
    b[0] = c_beta * z.reward
    b[1:] = z.reward * phi[z.s]
    return a, b


class VStat:
    """Vectorised v-statistics over a batch of transitions."""

    def __init__(self, c_beta: float, features: FeatureMap):
        self.c_beta = float(c_beta)
        self.features = features

    def __call__(self, z: Transition):
        return v_stat(None, z, self.c_beta, self.features)

    def batch(self, s, a, s_next, r):
        phi = self.features.table
        m = phi.shape[1]
        n = s.shape[0]
        A = np.zeros((n, m + 1, m + 1))
        A[:, 0, 0] = self.c_beta
        A[:, 1:, 0] = phi[s]
        A[:, 1:, 1:] = phi[s][:, :, None] * (phi[s] - phi[s_next])[:, None, :]
        b = np.empty((n, m + 1))
        b[:, 0] = self.c_beta * r
        b[:, 1:] = r[:, None] * phi[s]
        return A, b


class UStat:
    """Vectorised u-statistics at fixed (theta, xi)."""

    def __init__(self, score_table: np.ndarray, xi, features: FeatureMap):
        self.score_table = np.asarray(score_table)
        self.xi = np.asarray(xi, dtype=float)
        self.features = features

    def __call__(self, z: Transition):
        psi = self.score_table[z.s, z.a]
        phi = self.features.table
        adv = z.reward - self.xi[0] + self.xi[1:] @ (phi[z.s_next] - phi[z.s])
        return np.outer(psi, psi), adv * psi

    def batch(self, s, a, s_next, r):
        psi = self.score_table[s, a]
        phi = self.features.table
        adv = r - self.xi[0] + (phi[s_next] - phi[s]) @ self.xi[1:]
        return psi[:, :, None] * psi[:, None, :], adv[:, None] * psi


def mlmc_combine(values: np.ndarray, level: LevelDraw) -> np.ndarray:
    """Apply the randomized telescoping combination to stacked per-transition values."""
    y0 = values[0]
    if level.truncated:
        return y0.copy()
    n = level.planned_len
    y_full = values[:n].mean(axis=0)
    y_half = values[: n // 2].mean(axis=0)
    return y0 + n * (y_full - y_half)


def mlmc_assemble(stat, mdp: TabularMdp, pclass: PolicyClass, theta, s0: int, t_max: int,
                  rng: np.random.Generator, pi_cdf=None, keep_trajectory=False) -> MlmcEstimate:
    """One MLMC estimate of the (matrix, vector) pair produced by ``stat``.

    ``stat`` maps a Transition to ``(a_term, b_term)``; objects exposing a
    ``batch(s, a, s_next, r)`` method are evaluated on the whole sub-trajectory at once.
    """
    level = draw_level(rng, t_max)
    pi_cdf = policy_cdf(pclass, theta) if pi_cdf is None else pi_cdf
    u = rng.random((level.planned_len, 2))
    st, ac, nx = rollout(pi_cdf, mdp.transition_cdf, s0, u)
    r = mdp.reward[st, ac]
    if hasattr(stat, "batch"):
        A, b = stat.batch(st, ac, nx, r)
    else:
        pairs = [stat(Transition(int(x), int(y), int(w), float(v))) for x, y, w, v in zip(st, ac, nx, r)]
        A = np.stack([p[0] for p in pairs])
        b = np.stack([p[1] for p in pairs])
    traj = ()
    if keep_trajectory:
        traj = tuple(Transition(int(x), int(y), int(w), float(v)) for x, y, w, v in zip(st, ac, nx, r))
    return MlmcEstimate(mlmc_combine(A, level), mlmc_combine(b, level), level,
                        level.planned_len, int(nx[-1]), traj)


def expected_cost(t_max: int) -> float:
    """Mean transitions per assembly: floor(log2 t_max) + 2^-floor(log2 t_max)."""
    levels = check_t_max(t_max)
    return levels + 2.0 ** (-levels)
