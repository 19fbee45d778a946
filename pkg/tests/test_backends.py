"""The compiled kernels and the numpy path consume the same random stream and must agree."""
import numpy as np
import pytest

from mlmc_nac import backend, kernels
from mlmc_nac.actor_critic import CriticState, HyperParams, critic_subroutine, npg_subroutine
from mlmc_nac.harness import mlmc_vs_batch, reference_mdp
from mlmc_nac.mdp import fourier_features, generate_random_ergodic, make_rng, reduced_one_hot_features
from mlmc_nac.mlmc import UStat, VStat, mlmc_assemble
from mlmc_nac.policy import PolicyClass

pytestmark = pytest.mark.skipif(not backend.NUMBA_AVAILABLE, reason="numba not installed")


def test_philox_stream_shared_with_compiled_code():
    a, b = make_rng(3), make_rng(3)
    kernels.mlmc_vs_batch.py_func  # noqa: B018 - the dispatcher keeps the python source
    x = np.empty(4)

    @backend.njit
    def draw(rng, out):
        for i in range(out.shape[0]):
            out[i] = rng.random()
        return rng.geometric(0.5)

    q = draw(a, x)
    np.testing.assert_array_equal(x, b.random(4))
    assert q == b.geometric(0.5)
    assert a.random() == b.random()


@pytest.mark.parametrize("seed", range(5))
def test_critic_recursion_identical(seed):
    mdp = generate_random_ergodic(6, 3, seed=seed)
    f = fourier_features(6, 2)
    pc = PolicyClass.tabular(6, 3)
    theta = make_rng(seed).normal(size=pc.dim)
    hp = HyperParams(0.1, 0.05, 0.05, 2.0, 256, 64, 1)
    init = CriticState(0.1, np.array([0.2, -0.1, 0.0, 0.3]))
    out = [critic_subroutine(mdp, pc, theta, init, hp, 2, make_rng(100 + seed), f, be) for be in ("numba", "numpy")]
    np.testing.assert_allclose(out[0][0].xi, out[1][0].xi, rtol=1e-10, atol=1e-12)
    assert out[0][1:] == out[1][1:]


@pytest.mark.parametrize("seed", range(5))
def test_npg_recursion_identical(seed):
    mdp = generate_random_ergodic(5, 2, seed=seed)
    f = reduced_one_hot_features(5)
    pc = PolicyClass.tabular(5, 2)
    theta = make_rng(seed).normal(size=pc.dim)
    xi = make_rng(seed + 1).normal(size=5)
    hp = HyperParams(0.1, 0.05, 0.1, 2.0, 1024, 32, 1)
    out = [npg_subroutine(mdp, pc, theta, xi, np.zeros(pc.dim), hp, 0, make_rng(7 * seed), f, be)
           for be in ("numba", "numpy")]
    np.testing.assert_allclose(out[0][0], out[1][0], rtol=1e-10, atol=1e-12)
    assert out[0][1:] == out[1][1:]


def test_kernel_single_step_matches_assembly():
    # one step x - (A x - b) from x = 0 returns the MLMC b-estimate
    mdp = generate_random_ergodic(4, 2, seed=8)
    f = fourier_features(4)
    pc = PolicyClass.tabular(4, 2)
    theta = np.array([0.3, -0.7, 1.0, 0.2])
    cdf = np.cumsum(pc.probs_table(theta), axis=1)
    for seed in range(30):
        x, s, n, bad = kernels.mlmc_recursion(kernels.CRITIC_DIRECTION, cdf, mdp.transition_cdf, mdp.reward, f.table,
                                              np.zeros((1, 1, 1)), np.zeros(1), 1.5, 1.0, 1, 6, 1, np.zeros(3),
                                              make_rng(seed), 1e12)
        est = mlmc_assemble(VStat(1.5, f), mdp, pc, theta, 1, 64, make_rng(seed))
        np.testing.assert_allclose(x, est.b_hat, atol=1e-12)
        assert (s, n, bad) == (est.final_state, est.transitions_used, -1)


def test_npg_direction_matches_assembly():
    mdp = generate_random_ergodic(3, 3, seed=1)
    f = reduced_one_hot_features(3)
    pc = PolicyClass.tabular(3, 3)
    theta = make_rng(0).normal(size=pc.dim)
    xi = np.array([0.4, 0.1, -0.3])
    omega = make_rng(1).normal(size=pc.dim)
    score = np.ascontiguousarray(pc.score_table(theta))
    cdf = np.cumsum(pc.probs_table(theta), axis=1)
    for seed in range(30):
        x, *_ = kernels.mlmc_recursion(kernels.NPG_DIRECTION, cdf, mdp.transition_cdf, mdp.reward, f.table, score, xi,
                                       1.0, 1.0, 1, 5, 0, omega, make_rng(seed), 1e12)
        est = mlmc_assemble(UStat(score, xi, f), mdp, pc, theta, 0, 32, make_rng(seed))
        np.testing.assert_allclose(x, omega - (est.a_hat @ omega - est.b_hat), atol=1e-12)


def test_validation_kernel_identical():
    outs = [mlmc_vs_batch(reference_mdp(), 16, 300, make_rng(5), backend=be) for be in ("numba", "numpy")]
    for a, b in zip(*outs):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_env_flag(monkeypatch):
    monkeypatch.setenv(backend.ENV_VAR, "numpy")
    assert backend.current_backend() == "numpy"
    monkeypatch.setenv(backend.ENV_VAR, "numba")
    assert backend.current_backend() == "numba"
    monkeypatch.setenv(backend.ENV_VAR, "fortran")
    with pytest.raises(ValueError):
        backend.current_backend()
    with pytest.raises(ValueError):
        backend.resolve("cuda")
