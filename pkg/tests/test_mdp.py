import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlmc_nac import oracle
from mlmc_nac.errors import MdpParseError, MdpValidationError
from mlmc_nac.mdp import (FeatureMap, TabularMdp, empty_features, excludes_ones, fourier_features,
                          generate_random_ergodic, load_mdp, make_rng, mdp_to_dict, reduced_one_hot_features,
                          sample_transition, save_mdp)


def two_state_chain():
    P = np.array([[[0.9, 0.1]], [[0.2, 0.8]]])
    return TabularMdp(2, 1, np.array([[1.0], [0.0]]), P, np.array([0.5, 0.5]))


class TestValidation:
    def test_reward_range(self):
        P = np.full((2, 1, 2), 0.5)
        with pytest.raises(MdpValidationError, match="reward range"):
            TabularMdp(2, 1, np.array([[1.5], [0.0]]), P, np.array([0.5, 0.5]))

    def test_row_sum(self):
        P = np.full((2, 1, 2), 0.5)
        P[1, 0] = [0.45, 0.45]
        with pytest.raises(MdpValidationError, match=r"transition row sum at \(s=1, a=0\)"):
            TabularMdp(2, 1, np.zeros((2, 1)), P, np.array([0.5, 0.5]))

    def test_negative_entry(self):
        P = np.array([[[1.2, -0.2]], [[0.5, 0.5]]])
        with pytest.raises(MdpValidationError):
            TabularMdp(2, 1, np.zeros((2, 1)), P, np.array([0.5, 0.5]))

    def test_initial_dist(self):
        with pytest.raises(MdpValidationError, match="initial_dist"):
            TabularMdp(2, 1, np.zeros((2, 1)), np.full((2, 1, 2), 0.5), np.array([0.5, 0.6]))

    def test_arrays_are_read_only(self):
        mdp = two_state_chain()
        with pytest.raises(ValueError):
            mdp.reward[0, 0] = 0.3


class TestSampling:
    def test_deterministic_row(self):
        P = np.zeros((3, 1, 3))
        P[:, 0, 2] = 1.0
        mdp = TabularMdp(3, 1, np.full((3, 1), 0.7), P, np.ones(3) / 3)
        rng = make_rng(0)
        for _ in range(50):
            z = sample_transition(mdp, 0, 0, rng)
            assert z.s_next == 2
            assert z.reward == 0.7

    def test_frequency(self):
        P = np.array([[[0.25, 0.75]], [[0.5, 0.5]]])
        mdp = TabularMdp(2, 1, np.zeros((2, 1)), P, np.array([1.0, 0.0]))
        rng = make_rng(1)
        hits = sum(sample_transition(mdp, 0, 0, rng).s_next for _ in range(100_000))
        assert abs(hits / 100_000 - 0.75) <= 0.01

    def test_index_error(self):
        with pytest.raises(IndexError):
            sample_transition(two_state_chain(), 2, 0, make_rng(0))
        with pytest.raises(IndexError):
            sample_transition(two_state_chain(), 0, 1, make_rng(0))


class TestGenerator:
    def test_self_loops(self):
        mdp = generate_random_ergodic(2, 1, 0.1, seed=3)
        P = mdp.transition[:, 0, :]
        assert np.all(np.diag(P) >= 0.1)
        assert np.all(P > 0)

    def test_same_seed_identical(self):
        a = generate_random_ergodic(4, 3, 0.1, seed=9)
        b = generate_random_ergodic(4, 3, 0.1, seed=9)
        assert a == b
        assert a.transition.tobytes() == b.transition.tobytes()

    def test_unique_stationary_under_policies(self):
        mdp = generate_random_ergodic(5, 3, seed=7)
        rng = make_rng(4)
        policies = [np.full((5, 3), 1 / 3)] + [rng.dirichlet(np.ones(3), size=5) for _ in range(10)]
        for pi in policies:
            d = oracle.stationary_distribution(mdp.induced_chain(pi))
            # power iteration from two different starts lands on the same vector
            P = mdp.induced_chain(pi)
            x, y = np.eye(5)[0], np.eye(5)[4]
            for _ in range(500):
                x, y = x @ P, y @ P
            np.testing.assert_allclose(x, d, atol=1e-10)
            np.testing.assert_allclose(y, d, atol=1e-10)

    @pytest.mark.parametrize("args", [(1, 2), (3, 0)])
    def test_bad_sizes(self, args):
        with pytest.raises(ValueError):
            generate_random_ergodic(*args)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 7), st.integers(1, 4), st.integers(0, 10_000))
    def test_induced_chain_row_stochastic(self, S, A, seed):
        mdp = generate_random_ergodic(S, A, seed=seed)
        pi = make_rng(seed + 1).dirichlet(np.ones(A), size=S)
        P = mdp.induced_chain(pi)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


class TestFeatures:
    def test_reduced_one_hot(self):
        f = reduced_one_hot_features(3)
        np.testing.assert_array_equal(f.table, [[1, 0], [0, 1], [0, 0]])
        assert np.linalg.matrix_rank(np.column_stack([f.table, np.ones(3)])) == 3
        assert np.linalg.matrix_rank(f.table) == 2
        assert f.compliant

    def test_reduced_one_hot_needs_two_states(self):
        with pytest.raises(ValueError):
            reduced_one_hot_features(1)

    def test_full_one_hot_not_compliant(self):
        assert not excludes_ones(np.eye(3))
        with pytest.raises(MdpValidationError):
            FeatureMap(np.eye(3), compliant=True)

    def test_norm_bound(self):
        with pytest.raises(MdpValidationError, match="norm"):
            FeatureMap(np.array([[1.0, 1.0], [0.0, 0.0]]))

    def test_fourier(self):
        f = fourier_features(7, 2)
        assert np.all(np.linalg.norm(f.table, axis=1) <= 1 + 1e-12)
        assert excludes_ones(f.table)

    def test_empty(self):
        f = empty_features(4)
        assert f.dim == 0 and f.n_states == 4


class TestFiles:
    def test_round_trip(self, tmp_path):
        mdp = generate_random_ergodic(4, 2, seed=1)
        save_mdp(mdp, tmp_path / "m.json")
        assert load_mdp(tmp_path / "m.json") == mdp

    def test_row_sum_file(self, tmp_path):
        d = mdp_to_dict(two_state_chain())
        d["transition"][0][0] = [0.8, 0.1]
        (tmp_path / "m.json").write_text(json.dumps(d))
        with pytest.raises(MdpValidationError, match="transition row sum"):
            load_mdp(tmp_path / "m.json")

    def test_reward_file(self, tmp_path):
        d = mdp_to_dict(two_state_chain())
        d["reward"][0][0] = 1.5
        (tmp_path / "m.json").write_text(json.dumps(d))
        with pytest.raises(MdpValidationError, match="reward range"):
            load_mdp(tmp_path / "m.json")

    def test_malformed_json_has_position(self, tmp_path):
        (tmp_path / "m.json").write_text('{"n_states": 2,\n "reward": [}')
        with pytest.raises(MdpParseError, match="line 2"):
            load_mdp(tmp_path / "m.json")

    def test_missing_field(self, tmp_path):
        d = mdp_to_dict(two_state_chain())
        del d["initial_dist"]
        (tmp_path / "m.json").write_text(json.dumps(d))
        with pytest.raises(MdpParseError, match="initial_dist"):
            load_mdp(tmp_path / "m.json")
