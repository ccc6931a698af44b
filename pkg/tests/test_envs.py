import time

import numpy as np
import pytest

from tsivrpg.envs import (BUILTIN, FROZENLAKE_8X8, build_corridor, build_frozenlake4x4, build_frozenlake8x8,
                          build_gridworld, build_tiny, make_env)
from tsivrpg.mdp import exact_occupancy, value_iteration


class TestFrozenLake:
    def test_shape_and_rows(self, frozenlake):
        assert (frozenlake.num_states, frozenlake.num_actions) == (64, 4)
        assert np.max(np.abs(frozenlake.transition.sum(axis=2) - 1)) < 1e-12

    def test_absorbing_cells(self, frozenlake):
        cells = "".join(FROZENLAKE_8X8)
        for s, c in enumerate(cells):
            if c in "HG":
                assert np.all(frozenlake.transition[s, :, s] == 1.0)
                assert np.all(frozenlake.reward[s] == 0.0)

    def test_slip_rule(self, frozenlake):
        # from the start (top-left) moving right: right, down, or up-into-wall (stays)
        row = frozenlake.transition[0, 2]
        assert row[1] == pytest.approx(1 / 3) and row[8] == pytest.approx(1 / 3) and row[0] == pytest.approx(1 / 3)

    def test_value_anchor(self, frozenlake):
        t0 = time.perf_counter()
        v = value_iteration(frozenlake).optimal_value
        assert abs(v - 0.4146) <= 1e-3
        assert time.perf_counter() - t0 < 1.0

    def test_deterministic_construction(self):
        a, b = build_frozenlake8x8(), build_frozenlake8x8()
        assert np.array_equal(a.transition, b.transition) and np.array_equal(a.reward, b.reward)

    def test_small_map(self):
        m = build_frozenlake4x4()
        assert m.num_states == 16
        # published optimum for the slippery 4x4 map at gamma=0.99 is about 0.54
        assert value_iteration(m).optimal_value == pytest.approx(0.54, abs=0.01)


class TestGridworld:
    @pytest.mark.parametrize("layout", [["SFF", "FF"], ["SFX", "FFG"], ["FFF", "FFG"], ["SFF", "SFG"],
                                        ["SFF", "FFF"]])
    def test_bad_layouts(self, layout):
        with pytest.raises(ValueError):
            build_gridworld(layout)

    def test_deterministic_grid(self):
        m = build_gridworld(["SG"], 0.9, slippery=False)
        assert m.transition[0, 2, 1] == 1.0 and m.reward[0, 2] == 1.0 and m.reward[0, 0] == 0.0


class TestTinyAndCorridor:
    def test_single_state(self):
        m = build_tiny("single_state")
        assert m.transition.shape == (1, 1, 1)

    def test_switch(self):
        m = build_tiny("two_state_switch")
        assert np.array_equal(m.initial_dist, [1, 0])
        assert m.transition[0, 0, 0] == 1 and m.transition[0, 1, 1] == 1 and m.transition[1, 1, 0] == 1

    def test_chain_occupancy_series(self):
        gamma = 0.5
        m = build_tiny("three_state_chain", gamma)
        right = np.array([[0.0, 1.0]] * 3)
        lam = exact_occupancy(m, right).entries.reshape(3, 2)
        # states 0, 1, then 2 forever
        assert lam[0, 1] == pytest.approx(1.0) and lam[1, 1] == pytest.approx(gamma)
        assert lam[2, 1] == pytest.approx(gamma**2 / (1 - gamma))
        assert np.all(lam[:, 0] == 0)

    def test_enumeration_budget(self):
        for kind in ("two_state_switch", "three_state_chain"):
            m = build_tiny(kind)
            # (|S||A|)^H at the largest horizon used in the enumeration tests
            assert (m.num_states * m.num_actions) ** 4 <= 5000

    def test_corridor(self):
        m = build_corridor(5, 0.9)
        assert value_iteration(m).optimal_value == pytest.approx(0.9**3)
        with pytest.raises(ValueError):
            build_corridor(1)

    def test_unknown_tiny(self):
        with pytest.raises(ValueError):
            build_tiny("four_state")


def test_make_env():
    assert set(BUILTIN) >= {"frozenlake8x8", "corridor5", "two_state_switch"}
    assert make_env("frozenlake8x8", 0.9).discount == 0.9
    with pytest.raises(ValueError, match="unknown environment"):
        make_env("cartpole")
