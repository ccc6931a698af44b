import math
import warnings
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from tsivrpg.harness import (CURVE_COLUMNS, ConfigError, DegenerateFitError, ExperimentConfig,
                             config_from_dict, execute, fit_line, load_config, moving_average,
                             nonlinear_run, run_experiment, slope_episodes, slope_study, summarize,
                             uniform_policy_value)
from tsivrpg.envs import build_gridworld, build_tiny
from tsivrpg.utilities import LogBarrierUtility

GOLDEN = {
    "experiment": "curve",
    "environment": "two_state_switch",
    "utility": {"kind": "linear"},
    "tsivr_pg": {"n_large": 4, "n_small": 2, "epoch_length": 3, "horizon": 5, "step_size": 1.0,
                 "radius": 0.2, "n_epochs": 2},
    "runs": {"num_runs": 3, "seed_base": 5},
    "output": {"window": 3},
}


def naive_moving_average(x, w):
    return np.array([np.mean(x[max(0, i - w + 1): i + 1]) for i in range(len(x))])


def sort_quantile(col, q):
    # linear interpolation between order statistics (the default numpy rule)
    s = np.sort(col)
    pos = q * (len(s) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


class TestSummaries:
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=60), st.integers(1, 70))
    def test_moving_average(self, xs, w):
        assert np.allclose(moving_average(xs, w), naive_moving_average(np.array(xs), w), atol=1e-9)

    @given(st.integers(0, 2**31), st.integers(1, 12), st.integers(1, 8))
    @settings(max_examples=50)
    def test_quantiles_against_sort(self, seed, runs, points):
        curves = np.random.default_rng(seed).standard_normal((runs, points))
        s = summarize(curves, np.arange(points))
        for k in range(points):
            assert s.q25[k] == pytest.approx(sort_quantile(curves[:, k], 0.25))
            assert s.median[k] == pytest.approx(sort_quantile(curves[:, k], 0.5))
            assert s.q75[k] == pytest.approx(sort_quantile(curves[:, k], 0.75))
            assert s.q25[k] <= s.median[k] <= s.q75[k]

    def test_single_run(self):
        s = summarize([[0.1, 0.5, 0.3]], [1, 2, 3])
        assert np.array_equal(s.median, [0.1, 0.5, 0.3])
        assert np.array_equal(s.q25, s.median) and np.array_equal(s.q75, s.median)

    def test_order_statistic(self):
        assert summarize([[1.0], [2.0], [9.0]], [10]).median[0] == 2.0


class TestFit:
    def test_recovers_line(self):
        x = np.log([100, 200, 400, 800])
        assert fit_line(x, -0.5 * x + 3) == pytest.approx((-0.5, 3.0))

    @pytest.mark.parametrize("x", [[1.0, 1.0], [2.0]])
    def test_degenerate(self, x):
        with pytest.raises(DegenerateFitError):
            fit_line(x, [0.0] * len(x))

    def test_episode_accounting(self):
        assert slope_episodes(100, 20) == (10, 20 * 200)
        assert slope_episodes(101, 1) == (11, 101 + 121)


class TestConfig:
    @pytest.mark.parametrize("doc,path", [
        ({"bogus": 1}, "bogus"),
        ({"experiment": "movie"}, "experiment"),
        ({"environment": "cartpole"}, "environment"),
        ({"discount": 1.5}, "discount"),
        ({"algorithm": "svrpg"}, "algorithm"),
        ({"utility": {"kind": "cubic"}}, "utility.kind"),
        ({"utility": {"kind": "log_barrier", "sigma": -1}}, "utility.sigma"),
        ({"utility": {"kind": "linear", "sigma": 1}}, "utility.sigma"),
        ({"tsivr_pg": {"n_large": 0}}, "tsivr_pg.n_large"),
        ({"tsivr_pg": {"step_size": "fast"}}, "tsivr_pg.step_size"),
        ({"tsivr_pg": {"eta": 0.1}}, "tsivr_pg.eta"),
        ({"reinforce": {"batch_size": 2.5}}, "reinforce.batch_size"),
        ({"runs": {"num_runs": 0}}, "runs.num_runs"),
        ({"runs": {"seed_base": -1}}, "runs.seed_base"),
        ({"output": {"window": 0}}, "output.window"),
        ({"output": {"returns": "both"}}, "output.returns"),
        ({"experiment": "slope", "slope": {"n_values": [16]}}, "slope.n_values"),
        ({"experiment": "slope", "slope": {"n_values": [16, 64]}, "algorithm": "reinforce"}, "algorithm"),
        ({"slope": {"n_values": [16, -4]}}, "slope.n_values[1]"),
        ({"slope": {"gap": "mean"}}, "slope.gap"),
        ({"track_exact": "yes"}, "track_exact"),
    ])
    def test_field_paths(self, doc, path):
        with pytest.raises(ConfigError) as info:
            config_from_dict(doc)
        assert info.value.path == path
        assert str(info.value).startswith(path)

    def test_defaults_follow_frozenlake_settings(self):
        cfg = config_from_dict({})
        assert cfg.tsivr_pg["n_large"] == 100 and cfg.tsivr_pg["n_small"] == 10
        assert cfg.tsivr_pg["epoch_length"] == 10 and cfg.tsivr_pg["step_size"] == 0.1
        assert cfg.tsivr_pg["radius"] == 0.01 and cfg.tsivr_pg["horizon"] == 200
        assert cfg.window == 50 and cfg.returns == "undiscounted" and cfg.last_episodes == 50

    def test_seeds_and_env_override(self, monkeypatch, tmp_path):
        cfg = config_from_dict({"runs": {"num_runs": 3, "seed_base": 7}, "output": {"dir": "x"}})
        assert cfg.seeds() == [7, 8, 9]
        monkeypatch.setenv("TSIVRPG_OUT", str(tmp_path))
        assert cfg.output_dir() == tmp_path

    def test_files(self, tmp_path):
        (tmp_path / "bad.yaml").write_text("a: [1,\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "bad.yaml")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")

    def test_utility_from_file(self, tmp_path):
        np.savetxt(tmp_path / "r.txt", [0, 1, 2, 3])
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(
            {**GOLDEN, "utility": {"kind": "linear", "reward": "r.txt"}, "output": {"dir": str(tmp_path / "o")}}))
        cfg = load_config(tmp_path / "c.yaml")
        assert run_experiment(cfg).traces


class TestRunExperiment:
    def test_golden_csv(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TSIVRPG_OUT", str(tmp_path))
        result = run_experiment(config_from_dict(GOLDEN))
        text = (tmp_path / "curve.csv").read_bytes()
        golden = (Path(__file__).parent / "golden" / "curve_two_state.csv").read_bytes()
        assert text == golden
        assert b"\r" not in text
        assert text.decode().splitlines()[0] == ",".join(CURVE_COLUMNS)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["curve.csv", "run_5.csv", "run_6.csv", "run_7.csv"]
        # the summary is the quantile of each run's smoothed curve sampled at the checkpoints
        eps = result.traces[0].column("episodes").astype(int)
        curves = [naive_moving_average(t.returns(), 3)[eps - 1] for t in result.traces]
        for k in range(len(eps)):
            assert result.summary.median[k] == pytest.approx(np.median([c[k] for c in curves]))

    def test_reinforce_curve(self, tmp_path):
        cfg = config_from_dict({**GOLDEN, "algorithm": "reinforce", "output": {"dir": str(tmp_path)},
                                "reinforce": {"batch_size": 3, "horizon": 5, "n_iterations": 4}})
        result = run_experiment(cfg)
        assert list(result.summary.episodes) == [3, 6, 9, 12]

    def test_partial_flush_on_failure(self, tmp_path, monkeypatch):
        import tsivrpg.harness as h
        calls = {"n": 0}
        real = h.run_single

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 2:
                raise FloatingPointError("boom")
            return real(*args, **kwargs)

        monkeypatch.setattr(h, "run_single", flaky)
        with pytest.raises(FloatingPointError):
            run_experiment(config_from_dict({**GOLDEN, "output": {"dir": str(tmp_path), "window": 3}}))
        assert (tmp_path / "curve.csv").exists() and (tmp_path / "run_5.csv").exists()


class TestNonlinear:
    def test_uniform_value_is_exact(self):
        m = build_gridworld(["SFF", "FFF", "FFG"], 0.9)
        # no sampling on the exact track: repeated evaluation is bitwise stable
        assert uniform_policy_value(m, LogBarrierUtility(4)) == uniform_policy_value(m, LogBarrierUtility(4))

    def test_outputs(self, tmp_path):
        doc = {**GOLDEN, "experiment": "nonlinear", "utility": {"kind": "log_barrier"},
               "output": {"dir": str(tmp_path)}}
        result = nonlinear_run(config_from_dict(doc))
        for name in ("exact_curve.csv", "estimate_curve.csv", "baseline.csv"):
            assert (tmp_path / name).exists()
        assert result.extra["final_values"].shape == (3,)
        m = build_tiny("two_state_switch")
        assert result.extra["baseline"] == pytest.approx(
            uniform_policy_value(m, LogBarrierUtility(2)))

    def test_requires_exact_track(self):
        with pytest.raises(ConfigError):
            nonlinear_run(config_from_dict({**GOLDEN, "experiment": "nonlinear", "track_exact": False}))


class TestSlope:
    DOC = {"experiment": "slope", "environment": "corridor5",
           "tsivr_pg": {"horizon": 30, "step_size": 5.0, "radius": 0.3},
           "runs": {"num_runs": 2}, "track_exact": False, "slope": {"n_values": [4, 9, 16], "epochs": 3, "gap": "exact"}}

    def test_points_and_accounting(self, tmp_path):
        cfg = config_from_dict({**self.DOC, "output": {"dir": str(tmp_path)}})
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            result = execute(cfg)
        assert result.n_values == [4, 9, 16]
        assert np.allclose(np.exp(result.log_episodes), [3 * (4 + 4), 3 * (9 + 9), 3 * (16 + 16)])
        lines = (tmp_path / "slope_points.csv").read_text().splitlines()
        assert lines[0] == "N,B,m,episodes,gap,log_episodes,log_gap,log_gap_std" and len(lines) == 4
        assert (tmp_path / "slope_fit.csv").read_text().startswith("slope,intercept,v_star\n")

    def test_nonpositive_gap_dropped(self, monkeypatch, tmp_path):
        import tsivrpg.harness as h
        real = h.exact_occupancy
        calls = {"n": 0}

        def inflated(env, pi, horizon=None):
            # runs at the largest N report an occupancy worth more than the optimum
            calls["n"] += 1
            entries = real(env, pi, horizon).entries
            return SimpleNamespace(entries=entries * (100.0 if calls["n"] > 4 else 1.0))

        monkeypatch.setattr(h, "exact_occupancy", inflated)
        cfg = config_from_dict({**self.DOC, "output": {"dir": str(tmp_path)}})
        with pytest.warns(RuntimeWarning, match="point dropped"):
            result = slope_study(cfg)
        assert list(result.kept) == [True, True, False]
        assert np.isfinite(result.slope)
