"""Compiled inner loops.

The fused recursions below run an entire inner loop (level draw, rollout,
telescoping combination and the linear update) without leaving compiled code.
They consume the random stream in exactly the order used by
:func:`mlmc_nac.mlmc.mlmc_assemble`, so with the same generator state both
backends follow the same trajectory.
"""
import numpy as np

from .backend import njit

CRITIC_DIRECTION = 0  # A_v(z) xi - b_v(z)
NPG_DIRECTION = 1  # score score^T omega - A_hat(xi, z) score
NPG_B_TERM = 2  # A_hat(xi, z) score
CRITIC_B_TERM = 3  # b_v(z)


@njit
def _pick(cdf_row, u):
    n = cdf_row.shape[0]
    i = 0
    while i < n - 1 and cdf_row[i] <= u:
        i += 1
    return i


@njit
def _stat(mode, x, s, a, s2, r, phi, score, xi, c_beta, out):
    m = phi.shape[1]
    if mode == CRITIC_DIRECTION:
        coef = x[0] - r
        out[0] = c_beta * (x[0] - r)
        for i in range(m):
            coef += x[1 + i] * (phi[s, i] - phi[s2, i])
        for i in range(m):
            out[1 + i] = coef * phi[s, i]
    elif mode == CRITIC_B_TERM:
        out[0] = c_beta * r
        for i in range(m):
            out[1 + i] = r * phi[s, i]
    else:
        adv = r - xi[0]
        for i in range(m):
            adv += xi[1 + i] * (phi[s2, i] - phi[s, i])
        d = score.shape[2]
        if mode == NPG_DIRECTION:
            proj = 0.0
            for i in range(d):
                proj += score[s, a, i] * x[i]
            coef = proj - adv
        else:
            coef = adv
        for i in range(d):
            out[i] = coef * score[s, a, i]


@njit
def _mlmc_one(mode, x, pi_cdf, p_cdf, reward, phi, score, xi, c_beta, levels, s, rng,
              first, half, full, tmp):
    """One level draw + rollout; fills ``first`` with the combined estimate."""
    q = rng.geometric(0.5)
    n = 1 if q > levels else 1 << q
    half_n = n >> 1
    half[:] = 0.0
    full[:] = 0.0
    for t in range(n):
        a = _pick(pi_cdf[s], rng.random())
        s2 = _pick(p_cdf[s, a], rng.random())
        _stat(mode, x, s, a, s2, reward[s, a], phi, score, xi, c_beta, tmp)
        if t == 0:
            first[:] = tmp
        full += tmp
        if t < half_n:
            half += tmp
        s = s2
    if n > 1:
        # Y0 + n (Y^q - Y^{q-1}) with Y^q = full / n and Y^{q-1} = half / (n / 2)
        first += full - 2.0 * half
    return s, n


@njit
def mlmc_recursion(mode, pi_cdf, p_cdf, reward, phi, score, xi, c_beta, step, h_steps,
                   levels, s0, x0, rng, threshold):
    """x <- x - step * MLMC(direction) for ``h_steps`` steps along one trajectory.

    Returns (x, final_state, transitions, diverged_step) with diverged_step = -1
    on success.
    """
    x = x0.copy()
    dim = x.shape[0]
    first = np.zeros(dim)
    half = np.zeros(dim)
    full = np.zeros(dim)
    tmp = np.zeros(dim)
    s = s0
    used = 0
    for h in range(h_steps):
        s, n = _mlmc_one(mode, x, pi_cdf, p_cdf, reward, phi, score, xi, c_beta, levels, s, rng,
                         first, half, full, tmp)
        used += n
        norm2 = 0.0
        for i in range(dim):
            x[i] -= step * first[i]
            norm2 += x[i] * x[i]
        if not np.isfinite(norm2) or norm2 > threshold * threshold:
            return x, s, used, h
    return x, s, used, -1


@njit
def mlmc_vs_batch(mode, pi_cdf, p_cdf, reward, phi, score, xi, x, c_beta, levels, s0, n_reps,
                  rng, out_mlmc, out_batch, out_len):
    """Independent replicas from ``s0``: an MLMC estimate and a plain 2^levels average."""
    dim = out_mlmc.shape[1]
    first = np.zeros(dim)
    half = np.zeros(dim)
    full = np.zeros(dim)
    tmp = np.zeros(dim)
    n_batch = 1 << levels
    for k in range(n_reps):
        _, n = _mlmc_one(mode, x, pi_cdf, p_cdf, reward, phi, score, xi, c_beta, levels, s0, rng,
                         first, half, full, tmp)
        out_mlmc[k] = first
        out_len[k] = n
        full[:] = 0.0
        s = s0
        for t in range(n_batch):
            a = _pick(pi_cdf[s], rng.random())
            s2 = _pick(p_cdf[s, a], rng.random())
            _stat(mode, x, s, a, s2, reward[s, a], phi, score, xi, c_beta, tmp)
            full += tmp
            s = s2
        out_batch[k] = full / n_batch
