"""Differentiable softmax policy classes and the actor step."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

TABULAR = "tabular_reduced_softmax"
FEATURE = "feature_softmax"


@dataclass(frozen=True, eq=False)
class PolicyClass:
    """A softmax policy family over a finite MDP.

    ``tabular_reduced_softmax`` keeps one free logit per (state, action) except the
    last action, whose logit is fixed at 0, so d = S * (A - 1).
    ``feature_softmax`` uses logits psi(s, a) . theta with an S x A x d table.
    """

    kind: str
    n_states: int
    n_actions: int
    features: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == FEATURE:
            psi = np.array(self.features, dtype=float)
            if psi.ndim != 3 or psi.shape[:2] != (self.n_states, self.n_actions):
                raise ValueError(f"feature table must be {self.n_states} x {self.n_actions} x d")
            if np.linalg.norm(psi, axis=-1).max() > 1.0 + 1e-12:
                raise ValueError("action features must have norm <= 1")
            psi.setflags(write=False)
            object.__setattr__(self, "features", psi)
        elif self.kind != TABULAR:
            raise ValueError(f"unknown policy class {self.kind!r}")

    @classmethod
    def tabular(cls, n_states, n_actions):
        return cls(TABULAR, n_states, n_actions)

    @classmethod
    def log_linear(cls, features):
        psi = np.asarray(features, dtype=float)
        return cls(FEATURE, psi.shape[0], psi.shape[1], psi)

    @property
    def dim(self) -> int:
        if self.kind == TABULAR:
            return self.n_states * (self.n_actions - 1)
        return self.features.shape[2]

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta has shape {theta.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta must be finite")
        return theta

    def logits(self, theta) -> np.ndarray:
        theta = self._check(theta)
        if self.kind == TABULAR:
            S, A = self.n_states, self.n_actions
            out = np.zeros((S, A))
            out[:, : A - 1] = theta.reshape(S, A - 1)
            return out
        return self.features @ theta

    def probs_table(self, theta) -> np.ndarray:
        """pi(a|s) for every state, shape S x A."""
        return softmax(self.logits(theta), axis=1)

    def score_table(self, theta) -> np.ndarray:
        """grad_theta log pi(a|s) for every (s, a), shape S x A x d."""
        pi = self.probs_table(theta)
        S, A = self.n_states, self.n_actions
        if self.kind == TABULAR:
            free = A - 1
            out = np.zeros((S, A, S, free))
            block = np.eye(A)[:, :free][None, :, :] - pi[:, None, :free]
            out[np.arange(S), :, np.arange(S), :] = block
            return out.reshape(S, A, S * free)
        psi = self.features
        return psi - np.einsum("sa,sad->sd", pi, psi)[:, None, :]


def action_probs(pclass: PolicyClass, theta, s: int) -> np.ndarray:
    return pclass.probs_table(theta)[s]


def score(pclass: PolicyClass, theta, s: int, a: int) -> np.ndarray:
    return pclass.score_table(theta)[s, a]


def sample_action(pclass: PolicyClass, theta, s: int, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from pi(.|s); consumes exactly one uniform."""
    cdf = np.cumsum(action_probs(pclass, theta, s))
    i = int(np.searchsorted(cdf, rng.random(), side="right"))
    return min(i, cdf.shape[0] - 1)


def actor_update(theta, omega, alpha: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if theta.shape != omega.shape:
        raise ValueError(f"dimension mismatch: theta {theta.shape} vs omega {omega.shape}")
    return theta + alpha * omega
