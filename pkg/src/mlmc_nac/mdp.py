"""Finite tabular MDPs, ergodic instance generators, critic features and model files."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MdpParseError, MdpValidationError

ROW_SUM_TOL = 1e-12


def make_rng(seed) -> np.random.Generator:
    """Counter-based random stream (Philox) keyed by ``seed``."""
    return np.random.Generator(np.random.Philox(seed))


def _frozen(x, dtype=float):
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """The tuple (S, A, r, P, rho) with r in [0, 1]^{S x A} and P of shape S x A x S."""

    n_states: int
    n_actions: int
    reward: np.ndarray
    transition: np.ndarray
    initial_dist: np.ndarray
    # inverse-CDF tables used by every sampler, so all backends draw identically
    transition_cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        S, A = int(self.n_states), int(self.n_actions)
        if S < 1 or A < 1:
            raise MdpValidationError("n_states and n_actions must be positive")
        object.__setattr__(self, "n_states", S)
        object.__setattr__(self, "n_actions", A)
        r = _frozen(self.reward)
        P = _frozen(self.transition)
        rho = _frozen(self.initial_dist)
        if r.shape != (S, A):
            raise MdpValidationError(f"reward shape {r.shape} != {(S, A)}")
        if P.shape != (S, A, S):
            raise MdpValidationError(f"transition shape {P.shape} != {(S, A, S)}")
        if rho.shape != (S,):
            raise MdpValidationError(f"initial_dist shape {rho.shape} != {(S,)}")
        if not np.all(np.isfinite(r)) or r.min() < 0.0 or r.max() > 1.0:
            raise MdpValidationError("reward range: rewards must lie in [0, 1]")
        if not np.all(np.isfinite(P)) or P.min() < 0.0:
            raise MdpValidationError("transition entries must be non-negative")
        sums = P.sum(axis=-1)
        bad = np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            s, a = bad[0]
            raise MdpValidationError(
                f"transition row sum at (s={s}, a={a}) is {sums[s, a]!r}, expected 1")
        if not np.all(np.isfinite(rho)) or rho.min() < 0.0 or abs(rho.sum() - 1.0) > ROW_SUM_TOL:
            raise MdpValidationError("initial_dist must be a probability vector")
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial_dist", rho)
        object.__setattr__(self, "transition_cdf", _frozen(np.cumsum(P, axis=-1)))

    def __eq__(self, other):
        if not isinstance(other, TabularMdp):
            return NotImplemented
        return (self.n_states == other.n_states and self.n_actions == other.n_actions
                and np.array_equal(self.reward, other.reward)
                and np.array_equal(self.transition, other.transition)
                and np.array_equal(self.initial_dist, other.initial_dist))

    def induced_chain(self, policy: np.ndarray) -> np.ndarray:
        """P^pi(s, s') = sum_a pi(a|s) P(s'|s, a)."""
        return np.einsum("sa,sat->st", policy, self.transition)

    def induced_reward(self, policy: np.ndarray) -> np.ndarray:
        return np.einsum("sa,sa->s", policy, self.reward)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Critic features phi(s) in R^m, one row per state.

    ``compliant`` flags the map as excluding the all-ones vector from its
    column span; the flag is checked on construction.
    """

    table: np.ndarray
    compliant: bool = False

    def __post_init__(self):
        t = _frozen(self.table)
        if t.ndim != 2:
            raise MdpValidationError("feature table must be 2-D (S x m)")
        if t.shape[1] and np.linalg.norm(t, axis=1).max() > 1.0 + 1e-12:
            raise MdpValidationError("feature rows must have norm <= 1")
        object.__setattr__(self, "table", t)
        if self.compliant and not excludes_ones(t):
            raise MdpValidationError("feature span contains the all-ones vector")

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def n_states(self) -> int:
        return self.table.shape[0]


def excludes_ones(table: np.ndarray) -> bool:
    """True when e = (1, ..., 1) is not in the column span of ``table``."""
    S = table.shape[0]
    if table.shape[1] == 0:
        return True
    aug = np.column_stack([table, np.ones(S)])
    return np.linalg.matrix_rank(aug) > np.linalg.matrix_rank(table)


@dataclass(frozen=True)
class Transition:
    s: int
    a: int
    s_next: int
    reward: float


def sample_transition(mdp: TabularMdp, s: int, a: int, rng: np.random.Generator) -> Transition:
    if not (0 <= s < mdp.n_states and 0 <= a < mdp.n_actions):
        raise IndexError(f"(s={s}, a={a}) out of range for {mdp.n_states}x{mdp.n_actions} MDP")
    u = rng.random()
    s_next = inverse_cdf(mdp.transition_cdf[s, a], u)
    return Transition(int(s), int(a), s_next, float(mdp.reward[s, a]))


def inverse_cdf(cdf: np.ndarray, u: float) -> int:
    # first index with u < cdf[i]; the last index absorbs round-off in cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    return min(i, cdf.shape[0] - 1)


def generate_random_ergodic(S: int, A: int, self_loop_min: float = 0.1, seed: int = 0) -> TabularMdp:
    """Random MDP whose every stationary policy induces an irreducible, aperiodic chain.

    Each row is ``self_loop_min * e_s + (1 - self_loop_min) * Dirichlet(1)``; the
    self loop forces aperiodicity and the Dirichlet part is strictly positive.
    """
    if S < 2 or A < 1:
        raise ValueError(f"need S >= 2 and A >= 1, got S={S}, A={A}")
    if not 0.0 < self_loop_min < 1.0:
        raise ValueError("self_loop_min must lie in (0, 1)")
    rng = make_rng(seed)
    P = rng.dirichlet(np.ones(S), size=(S, A)) * (1.0 - self_loop_min)
    P[np.arange(S), :, np.arange(S)] += self_loop_min
    P /= P.sum(axis=-1, keepdims=True)
    reward = rng.random((S, A))
    return TabularMdp(S, A, reward, P, np.full(S, 1.0 / S))


def reduced_one_hot_features(S: int) -> FeatureMap:
    """phi(s) = e_s for s < S-1 and phi(S-1) = 0 (value of the last state pinned)."""
    if S < 2:
        raise ValueError("reduced one-hot features need S >= 2")
    return FeatureMap(np.eye(S)[:, : S - 1], compliant=True)


def empty_features(S: int) -> FeatureMap:
    """m = 0: the critic only tracks the average reward."""
    return FeatureMap(np.zeros((S, 0)), compliant=True)


def fourier_features(S: int, n_freq: int = 1) -> FeatureMap:
    """Unit-norm cosine/sine features on a ring of S states.

    Each frequency contributes a (cos, sin) pair scaled by 1/sqrt(n_freq).
    Every column sums to zero, so the all-ones vector is excluded.
    """
    if S < 3 or not 1 <= n_freq <= (S - 1) // 2:
        raise ValueError("need S >= 3 and 1 <= n_freq <= (S-1)//2")
    angles = 2.0 * np.pi * np.arange(S) / S
    cols = []
    for k in range(1, n_freq + 1):
        cols += [np.cos(k * angles), np.sin(k * angles)]
    return FeatureMap(np.column_stack(cols) / np.sqrt(n_freq), compliant=True)


# ---------------------------------------------------------------------------
# model files

_KEYS = ("n_states", "n_actions", "reward", "transition", "initial_dist")


def mdp_to_dict(mdp: TabularMdp) -> dict:
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "reward": mdp.reward.tolist(),
        "transition": mdp.transition.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
    }


def save_mdp(mdp: TabularMdp, path) -> None:
    Path(path).write_text(json.dumps(mdp_to_dict(mdp), indent=1) + "\n", encoding="utf-8")


def mdp_from_dict(data, source="<mdp>") -> TabularMdp:
    if not isinstance(data, dict):
        raise MdpParseError(f"{source}: top level must be a JSON object")
    for key in _KEYS:
        if key not in data:
            raise MdpParseError(f"{source}: missing field '{key}'")
    arrays = {}
    for key in ("reward", "transition", "initial_dist"):
        try:
            arrays[key] = np.array(data[key], dtype=float)
        except (TypeError, ValueError) as exc:
            raise MdpParseError(f"{source}: field '{key}' is not a numeric array ({exc})") from None
    for key in ("n_states", "n_actions"):
        if not isinstance(data[key], int) or isinstance(data[key], bool):
            raise MdpParseError(f"{source}: field '{key}' must be an integer")
    return TabularMdp(data["n_states"], data["n_actions"], arrays["reward"],
                      arrays["transition"], arrays["initial_dist"])


def load_mdp(path) -> TabularMdp:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MdpParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return mdp_from_dict(data, source=str(path))
