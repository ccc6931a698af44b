import itertools

import numpy as np
import pytest

from conftest import random_policy, tabular
from tsivrpg.envs import build_tiny
from tsivrpg.mdp import exact_occupancy
from tsivrpg.oracle import (EnumerationLimitError, enumerate_trajectories, exact_expectation,
                            exact_policy_gradient, finite_difference_gradient, truncated_objective)
from tsivrpg.utilities import EntropyUtility, LinearUtility, LogBarrierUtility


def brute_force_probability(m, pi, states, actions):
    p = m.initial_dist[states[0]]
    for t in range(len(states)):
        p *= pi[states[t], actions[t]]
        if t + 1 < len(states):
            p *= m.transition[states[t], actions[t], states[t + 1]]
    return p


class TestEnumeration:
    @pytest.mark.parametrize("kind", ["single_state", "two_state_switch", "three_state_chain"])
    def test_probabilities_match_brute_force(self, kind):
        m = build_tiny(kind)
        pi = random_policy(np.random.default_rng(0), m.num_states, m.num_actions)
        H = 3
        table = enumerate_trajectories(m, pi, H)
        assert table.probs.sum() == pytest.approx(1.0, abs=1e-14)
        found = {(tuple(tau.states), tuple(tau.actions)): p for tau, p in table}
        S, A = m.num_states, m.num_actions
        for states in itertools.product(range(S), repeat=H):
            for actions in itertools.product(range(A), repeat=H):
                p = brute_force_probability(m, pi, states, actions)
                assert found.get((states, actions), 0.0) == pytest.approx(p, abs=1e-15)

    def test_zero_probability_branches_dropped(self):
        m = build_tiny("two_state_switch")
        table = enumerate_trajectories(m, np.array([[0.0, 1.0], [0.0, 1.0]]), 4)
        assert len(table) == 1
        assert table.trajectories[0].steps == [(0, 1), (1, 1), (0, 1), (1, 1)]

    def test_cap(self):
        m = build_tiny("three_state_chain")
        with pytest.raises(EnumerationLimitError):
            enumerate_trajectories(m, np.full((3, 2), 0.5), 12, cap=1000)
        with pytest.raises(ValueError):
            enumerate_trajectories(m, np.full((3, 2), 0.5), 0)

    def test_expectation_of_occupancy(self):
        m = build_tiny("three_state_chain")
        pi = random_policy(np.random.default_rng(2), 3, 2)
        table = enumerate_trajectories(m, pi, 4)

        def occ(tau):
            v = np.zeros(6)
            for t, (s, a) in enumerate(tau.steps):
                v[s * 2 + a] += m.discount**t
            return v

        assert np.allclose(exact_expectation(table, occ), exact_occupancy(m, pi, horizon=4).entries,
                           atol=1e-10)


class TestGradients:
    def test_finite_difference_quadratic(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        x = np.array([0.3, -1.2])
        assert np.allclose(finite_difference_gradient(lambda v: v @ A @ v, x), 2 * A @ x, atol=1e-9)

    @pytest.mark.parametrize("kind", ["two_state_switch", "three_state_chain"])
    def test_enumeration_matches_finite_differences(self, kind):
        m = build_tiny(kind)
        fm = tabular(m)
        rng = np.random.default_rng(9)
        for utility in (LinearUtility(m.reward_vector()), LogBarrierUtility(m.num_actions),
                        EntropyUtility(m.discount, m.num_actions)):
            th = rng.standard_normal(fm.dim)
            en = exact_policy_gradient(m, fm, th, utility, 4, "enumeration")
            fd = exact_policy_gradient(m, fm, th, utility, 4, "finite_difference")
            assert np.max(np.abs(en - fd)) / np.max(np.abs(fd)) < 1e-6

    def test_truncated_objective(self):
        m = build_tiny("single_state", discount=0.5)
        fm = tabular(m)
        assert truncated_objective(m, fm, np.zeros(1), LinearUtility([1.0]), 2) == pytest.approx(1.5)
        assert truncated_objective(m, fm, np.zeros(1), LinearUtility([1.0]), None) == pytest.approx(2.0)

    def test_unknown_method(self, switch):
        with pytest.raises(ValueError):
            exact_policy_gradient(switch, tabular(switch), np.zeros(4), LinearUtility(np.zeros(4)), 2, "magic")
