"""Biased stochastic linear recursion x <- x - beta (P_hat x - q_hat) and synthetic checks.

Both inner loops of the actor-critic are instances of this recursion: the
critic with (P_hat, q_hat) = MLMC estimates of (A_v, b_v), the NPG subroutine
with MLMC estimates of (F, grad J).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError

DIVERGENCE_NORM = 1e12


def theorem2_step_size(H: int, lambda_p: float) -> float:
    """2 ln(H) / (lambda_p H)."""
    if H < 2:
        raise ValueError(f"H must be >= 2, got {H}")
    if not lambda_p > 0:
        raise ValueError("lambda_p must be positive")
    return 2.0 * math.log(H) / (lambda_p * H)


@dataclass
class RecursionSpec:
    """H steps of x <- x - step_size (P_hat x - q_hat).

    ``estimator_source(h)`` returns (P_hat, q_hat). A leading batch axis on
    ``x0`` (and on the source output) runs independent replicas side by side.
    """

    h_steps: int
    step_size: float
    estimator_source: Callable
    x0: np.ndarray

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.h_steps < 0:
            raise ValueError("h_steps must be non-negative")
        if not self.step_size >= 0:
            raise ValueError("step_size must be non-negative")

    @property
    def dim(self):
        return self.x0.shape[-1]


@dataclass
class RecursionDiagnostics:
    final: np.ndarray
    trajectory_norms: np.ndarray | None = None
    sigma_p2: float | None = None
    delta_p2: float | None = None
    sigma_q2: float | None = None
    delta_q2: float | None = None


def run_recursion(spec: RecursionSpec, reference=None, track_noise=False) -> RecursionDiagnostics:
    """Iterate exactly ``spec.h_steps`` times.

    With ``reference=(P, q)`` the squared distance to x* = P^{-1} q is recorded
    after every step (index 0 is the start); with ``track_noise`` the empirical
    second moments and biases of (P_hat - P, q_hat - q) are reported as well.
    """
    x = spec.x0.copy()
    x_star = None
    norms = None
    if reference is not None:
        P, q = (np.asarray(v, dtype=float) for v in reference)
        x_star = np.linalg.solve(P, q)
        norms = np.empty((spec.h_steps + 1,) + x.shape[:-1])
        norms[0] = np.sum((x - x_star) ** 2, axis=-1)
    sum_dp = sum_dq = None
    sp2 = sq2 = 0.0
    for h in range(spec.h_steps):
        P_hat, q_hat = spec.estimator_source(h)
        x = x - spec.step_size * ((P_hat @ x[..., None])[..., 0] - q_hat)
        norm = np.linalg.norm(x, axis=-1)
        if not np.all(np.isfinite(norm)) or norm.max(initial=0.0) > DIVERGENCE_NORM:
            raise DivergenceError(h)
        if norms is not None:
            norms[h + 1] = np.sum((x - x_star) ** 2, axis=-1)
        if track_noise and reference is not None:
            dP, dq = P_hat - P, q_hat - q
            sp2 += float(np.mean(np.sum(dP**2, axis=(-2, -1))))
            sq2 += float(np.mean(np.sum(dq**2, axis=-1)))
            sum_dp = dP if sum_dp is None else sum_dp + dP
            sum_dq = dq if sum_dq is None else sum_dq + dq
    diag = RecursionDiagnostics(x, norms)
    if track_noise and reference is not None and spec.h_steps:
        H = spec.h_steps
        mean_dp = sum_dp / H
        mean_dq = sum_dq / H
        diag.sigma_p2 = sp2 / H
        diag.sigma_q2 = sq2 / H
        diag.delta_p2 = float(np.mean(np.sum(mean_dp**2, axis=(-2, -1)))) if mean_dp.ndim >= 2 else 0.0
        diag.delta_q2 = float(np.mean(np.sum(mean_dq**2, axis=-1)))
    return diag


# ---------------------------------------------------------------------------
# synthetic validation

def gaussian_source(P, q, rng, sigma_p=0.0, sigma_q=0.0, q_bias=None, replicas=None):
    """Source yielding P + N(0, sigma_p^2) and q + bias + N(0, sigma_q^2), optionally batched."""
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    bias = np.zeros_like(q) if q_bias is None else np.asarray(q_bias, dtype=float)
    lead = () if replicas is None else (replicas,)

    def source(h):
        P_hat = P + sigma_p * rng.standard_normal(lead + P.shape) if sigma_p else np.broadcast_to(P, lead + P.shape)
        q_hat = q + bias + (sigma_q * rng.standard_normal(lead + q.shape) if sigma_q else 0.0)
        return P_hat, np.broadcast_to(q_hat, lead + q.shape)

    return source


def reference_system(n=4, seed=11, eig_range=(1.0, 3.0)):
    """Symmetric positive definite P with spectrum in ``eig_range`` and a random q."""
    rng = np.random.Generator(np.random.Philox(seed))
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = np.linspace(*eig_range, n)
    P = (Q * eigs) @ Q.T
    q = rng.standard_normal(n)
    return 0.5 * (P + P.T), q


def second_moment_curve(P, q, h_grid, replicas, rng, sigma=0.1, lambda_p=None):
    """Mean over replicas of ||x_H - x*||^2 for each H, with the H-dependent step size."""
    lambda_p = lambda_p or float(np.linalg.eigvalsh(P).min())
    out = []
    for H in h_grid:
        source = gaussian_source(P, q, rng, sigma, sigma, replicas=replicas)
        spec = RecursionSpec(H, theorem2_step_size(H, lambda_p), source, np.zeros((replicas, len(q))))
        diag = run_recursion(spec, reference=(P, q))
        out.append(float(diag.trajectory_norms[-1].mean()))
    return np.array(out)


def bias_floor_probe(P, q, q_bias, H, replicas, rng, sigma_q=0.1, lambda_p=None):
    """||mean(x_H) - x*||^2 with a constant bias injected into q_hat and no P noise.

    Returns (measured, analytic) where analytic = ||P^{-1} q_bias||^2.
    """
    lambda_p = lambda_p or float(np.linalg.eigvalsh(P).min())
    source = gaussian_source(P, q, rng, 0.0, sigma_q, q_bias=q_bias, replicas=replicas)
    spec = RecursionSpec(H, theorem2_step_size(H, lambda_p), source, np.zeros((replicas, len(q))))
    final = run_recursion(spec).final
    x_star = np.linalg.solve(P, q)
    measured = float(np.sum((final.mean(axis=0) - x_star) ** 2))
    analytic = float(np.sum(np.linalg.solve(P, q_bias) ** 2))
    return measured, analytic
