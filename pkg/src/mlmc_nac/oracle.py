"""Exact (dense linear algebra) ground truth on tabular MDPs.

Everything here is O(S^3) and intended for small instances: the quantities the
sampling-based algorithm estimates are computed directly so that estimators can
be compared against them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ErgodicityError, NonMixingError, SingularityError
from .mdp import FeatureMap, TabularMdp
from .policy import PolicyClass

PINV_CUTOFF = 1e-10
TV_THRESHOLD = 0.25
MAX_MIX_POWER = 10**6


@dataclass(frozen=True)
class PolicyEvaluation:
    stationary: np.ndarray
    gain: float
    v: np.ndarray
    q: np.ndarray
    advantage: np.ndarray
    occupancy: np.ndarray


@dataclass(frozen=True)
class AssumptionReport:
    lambda_min: float
    mu_min: float
    eps_app: float
    t_mix: int
    g1_bound: float
    c_beta_threshold: float

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _is_primitive(chain: np.ndarray) -> bool:
    # Wielandt: a nonnegative n x n matrix is primitive iff its (n-1)^2+1 power is positive
    n = chain.shape[0]
    pattern = (chain > 0).astype(np.int64)
    power = np.eye(n, dtype=np.int64)
    exp = (n - 1) ** 2 + 1
    base = pattern
    while exp:
        if exp & 1:
            power = np.minimum(power @ base, 1)
        base = np.minimum(base @ base, 1)
        exp >>= 1
    return bool(power.all())


def stationary_distribution(chain: np.ndarray) -> np.ndarray:
    """Unique d with d^T P = d^T and sum(d) = 1 for an irreducible aperiodic chain."""
    P = np.asarray(chain, dtype=float)
    n = P.shape[0]
    if not _is_primitive(P):
        raise ErgodicityError("chain is reducible or periodic")
    system = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    d, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    if np.max(np.abs(system @ d - rhs)) > 1e-9 or d.min() <= 0.0:
        raise ErgodicityError("no unique positive stationary distribution")
    return d / d.sum()


def evaluate_policy(mdp: TabularMdp, policy: np.ndarray) -> PolicyEvaluation:
    """Gain, differential values (normalised so d^T V = 0), Q and advantages."""
    pi = np.asarray(policy, dtype=float)
    P = mdp.induced_chain(pi)
    r = mdp.induced_reward(pi)
    d = stationary_distribution(P)
    gain = float(d @ r)
    n = mdp.n_states
    # (I - P + 1 d^T) is invertible for ergodic chains and forces d^T V = 0
    fundamental = np.eye(n) - P + np.outer(np.ones(n), d)
    v = np.linalg.solve(fundamental, r - gain)
    q = mdp.reward - gain + mdp.transition @ v
    return PolicyEvaluation(d, gain, v, q, q - v[:, None], d[:, None] * pi)


def fisher_matrix(mdp: TabularMdp, theta, pclass: PolicyClass, evaluation=None) -> np.ndarray:
    ev = evaluation or evaluate_policy(mdp, pclass.probs_table(theta))
    psi = pclass.score_table(theta)
    F = np.einsum("sa,sai,saj->ij", ev.occupancy, psi, psi)
    return 0.5 * (F + F.T)


def exact_policy_gradient(mdp: TabularMdp, theta, pclass: PolicyClass, evaluation=None) -> np.ndarray:
    ev = evaluation or evaluate_policy(mdp, pclass.probs_table(theta))
    psi = pclass.score_table(theta)
    return np.einsum("sa,sa,sai->i", ev.occupancy, ev.advantage, psi)


def gain(mdp: TabularMdp, theta, pclass: PolicyClass) -> float:
    return evaluate_policy(mdp, pclass.probs_table(theta)).gain


def pinv_psd(F: np.ndarray, cutoff: float = PINV_CUTOFF) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric PSD matrix with an absolute eigenvalue cutoff."""
    w, U = np.linalg.eigh(F)
    inv = np.where(w > cutoff, 1.0 / np.where(w > cutoff, w, 1.0), 0.0)
    return (U * inv) @ U.T


def exact_npg(mdp: TabularMdp, theta, pclass: PolicyClass, evaluation=None) -> np.ndarray:
    ev = evaluation or evaluate_policy(mdp, pclass.probs_table(theta))
    F = fisher_matrix(mdp, theta, pclass, ev)
    return pinv_psd(F) @ exact_policy_gradient(mdp, theta, pclass, ev)


def critic_moments(mdp: TabularMdp, policy: np.ndarray, features: FeatureMap, c_beta: float,
                   evaluation=None):
    """Exact A_v = E[A_v(z)] and b_v = E[b_v(z)] under the stationary transition law."""
    ev = evaluation or evaluate_policy(mdp, policy)
    Phi = features.table
    m = Phi.shape[1]
    d = ev.stationary
    P = mdp.induced_chain(policy)
    A = np.zeros((m + 1, m + 1))
    A[0, 0] = c_beta
    A[1:, 0] = Phi.T @ d
    A[1:, 1:] = Phi.T @ (d[:, None] * (Phi - P @ Phi))
    b = np.empty(m + 1)
    b[0] = c_beta * ev.gain
    b[1:] = Phi.T @ (d * mdp.induced_reward(policy))
    return A, b


def td_fixed_point(mdp: TabularMdp, theta, features: FeatureMap, c_beta: float,
                   pclass: PolicyClass | None = None, evaluation=None):
    """Return (xi_star, A_v, b_v) where xi_star = [eta*, zeta*] solves A_v xi = b_v."""
    pclass = pclass or PolicyClass.tabular(mdp.n_states, mdp.n_actions)
    policy = pclass.probs_table(theta)
    A, b = critic_moments(mdp, policy, features, c_beta, evaluation)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.min() <= 1e-12 * max(1.0, sv.max()):
        raise SingularityError("critic moment matrix A_v is singular", float(sv.min()))
    return np.linalg.solve(A, b), A, b


def critic_approx_error(mdp: TabularMdp, theta, features: FeatureMap, c_beta: float,
                        pclass: PolicyClass | None = None, evaluation=None) -> float:
    """E(theta, zeta*) = 1/2 sum_s d(s) (V(s) - zeta*^T phi(s))^2."""
    pclass = pclass or PolicyClass.tabular(mdp.n_states, mdp.n_actions)
    ev = evaluation or evaluate_policy(mdp, pclass.probs_table(theta))
    xi, _, _ = td_fixed_point(mdp, theta, features, c_beta, pclass, ev)
    resid = ev.v - features.table @ xi[1:]
    return 0.5 * float(ev.stationary @ resid**2)


def _tv_worst(Pt: np.ndarray, d: np.ndarray) -> float:
    return 0.5 * float(np.abs(Pt - d[None, :]).sum(axis=1).max())


def mixing_time(chain: np.ndarray, cap: int = MAX_MIX_POWER) -> int:
    """Smallest t >= 1 with max_s TV(P^t(s, .), d) <= 1/4.

    Powers are bracketed by repeated squaring and the crossing is then located by
    binary lifting; this relies on the worst-start TV being non-increasing in t.
    """
    P = np.asarray(chain, dtype=float)
    d = stationary_distribution(P)
    tol = TV_THRESHOLD + 1e-12
    if _tv_worst(P, d) <= tol:
        return 1
    powers = [P]
    while _tv_worst(powers[-1], d) > tol:
        if 2 ** len(powers) > 2 * cap:
            raise NonMixingError(f"TV above 1/4 after {cap} powers")
        powers.append(powers[-1] @ powers[-1])
    # TV(P^{2^(k-1)}) > 1/4 >= TV(P^{2^k}) with k = len(powers) - 1
    k = len(powers) - 1
    t_lo, M = 2 ** (k - 1), powers[k - 1]
    for j in range(k - 2, -1, -1):
        cand = M @ powers[j]
        if _tv_worst(cand, d) > tol:
            M, t_lo = cand, t_lo + 2**j
    t = t_lo + 1
    if t > cap:
        raise NonMixingError(f"TV above 1/4 after {cap} powers")
    return t


def c_beta_threshold(lam: float) -> float:
    if not np.isfinite(lam) or lam <= 0.0:
        return float("inf")
    if lam <= 1.0:
        return lam + float(np.sqrt(1.0 / lam**2 - 1.0))
    return lam


def critic_lambda(mdp: TabularMdp, policy: np.ndarray, features: FeatureMap, evaluation=None) -> float:
    """Smallest eigenvalue of the symmetric part of E[phi(s)(phi(s) - phi(s'))^T].

    With no critic features (m = 0) this returns 1, the scale of the
    average-reward row of A_v.
    """
    if features.dim == 0:
        return 1.0
    ev = evaluation or evaluate_policy(mdp, policy)
    Phi = features.table
    M = Phi.T @ (ev.stationary[:, None] * (Phi - mdp.induced_chain(policy) @ Phi))
    return float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())


def assumption_report(mdp: TabularMdp, theta, features: FeatureMap, pclass: PolicyClass,
                      c_beta: float | None = None) -> AssumptionReport:
    """Per-theta values of lambda, mu, eps_app, t_mix, G1 and the c_beta threshold.

    ``c_beta`` defaults to the threshold itself when omitted.
    """
    policy = pclass.probs_table(theta)
    ev = evaluate_policy(mdp, policy)
    lam = critic_lambda(mdp, policy, features, ev)
    threshold = c_beta_threshold(lam)
    cb = threshold if c_beta is None else c_beta
    F = fisher_matrix(mdp, theta, pclass, ev)
    mu = float(np.linalg.eigvalsh(F).min()) if F.size else 0.0
    eps = critic_approx_error(mdp, theta, features, cb, pclass, ev) if np.isfinite(cb) else float("nan")
    psi = pclass.score_table(theta)
    g1 = float(np.linalg.norm(psi, axis=-1).max()) if psi.size else 0.0
    return AssumptionReport(lam, mu, eps, mixing_time(mdp.induced_chain(policy)), g1, threshold)


def max_mixing_time(mdp: TabularMdp, pclass: PolicyClass, thetas) -> int:
    """Largest per-theta mixing time over a user-supplied grid (stand-in for the sup over Theta)."""
    return max(mixing_time(mdp.induced_chain(pclass.probs_table(th))) for th in thetas)


def optimal_gain(mdp: TabularMdp) -> tuple[float, np.ndarray]:
    """J* and an optimal deterministic policy via average-reward policy iteration."""
    S, A = mdp.n_states, mdp.n_actions
    actions = np.zeros(S, dtype=int)
    for _ in range(10 * S * A + 10):
        ev = evaluate_policy(mdp, np.eye(A)[actions])
        lookahead = mdp.reward + mdp.transition @ ev.v
        current = lookahead[np.arange(S), actions]
        best = lookahead.argmax(axis=1)
        # keep the incumbent action on ties to guarantee termination
        improve = lookahead[np.arange(S), best] > current + 1e-12
        if not improve.any():
            return ev.gain, actions
        actions = np.where(improve, best, actions)
    raise RuntimeError("policy iteration did not terminate")


def brute_force_optimal_gain(mdp: TabularMdp) -> float:
    """J* by enumerating all A^S deterministic policies (tiny instances only)."""
    eye = np.eye(mdp.n_actions)
    return max(evaluate_policy(mdp, eye[list(acts)]).gain
               for acts in itertools.product(range(mdp.n_actions), repeat=mdp.n_states))


def critic_limited_npg(mdp: TabularMdp, theta, pclass: PolicyClass, features: FeatureMap,
                       c_beta: float, evaluation=None) -> np.ndarray:
    """F^+ E[A_hat(xi*, z) score]: the direction the NPG subroutine converges to
    when fed the exact critic fixed point instead of the true advantage."""
    policy = pclass.probs_table(theta)
    ev = evaluation or evaluate_policy(mdp, policy)
    xi, _, _ = td_fixed_point(mdp, theta, features, c_beta, pclass, ev)
    vhat = features.table @ xi[1:]
    td_adv = mdp.reward - xi[0] + mdp.transition @ vhat - vhat[:, None]
    psi = pclass.score_table(theta)
    b = np.einsum("sa,sa,sai->i", ev.occupancy, td_adv, psi)
    return pinv_psd(fisher_matrix(mdp, theta, pclass, ev)) @ b
