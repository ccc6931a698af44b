"""On-policy REINFORCE for general utilities.

Each iteration samples ``N`` trajectories, refreshes the quasi-reward from the
batch occupancy and takes a plain (untruncated) gradient step.  For a linear
utility the quasi-reward is the reward itself and this is textbook REINFORCE
with causal (GPOMDP-style) score sums.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .estimators import occupancy_sum, pg_sum
from .mdp import MdpModel, sample_batch
from .policy import FeatureMap, policy_matrix
from .tsivr import (AlgoConfig, BatchInfo, IterationRecord, PolicyGradientMixin, RunTrace, _batch_returns,
                    _resolve_features, epoch_anchor, exact_objective, inner_update, truncated_step)
from .utilities import LinearUtility, Utility
from .validation import check_params, check_positive


@dataclass(frozen=True)
class BaselineConfig:
    batch_size: int = 100       # N
    horizon: int = 200          # H
    step_size: float = 0.05     # eta
    n_iterations: int = 100
    gamma: float = 0.99
    seed: int = 0
    track_exact: bool = True

    def __post_init__(self):
        for name in ("batch_size", "horizon", "n_iterations"):
            check_positive(getattr(self, name), name, integer=True)
        check_positive(self.step_size, "step_size")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")

    @property
    def total_samples(self) -> int:
        return self.n_iterations * self.batch_size * self.horizon


def reinforce_gradient(theta, env: MdpModel, fm: FeatureMap, utility: Utility, n: int, horizon: int,
                       gamma: float, seed: int, key=()) -> tuple[np.ndarray, np.ndarray, BatchInfo]:
    """Batch-mean gradient estimate, the batch occupancy mean and batch info."""
    theta = check_params(theta, fm.dim)
    probs = policy_matrix(fm, theta)
    batch = sample_batch(env, probs, horizon, n, seed, key)
    sw = np.full(n, 1.0 / n)
    lam = occupancy_sum(batch, None, gamma, fm.num_actions, fm.num_states * fm.num_actions, sw)
    g = pg_sum(batch, None, utility.grad(lam), gamma, fm, theta, probs, sw)
    ret, dret = _batch_returns(env, batch, gamma)
    return g, lam, BatchInfo(n, 1.0, ret, dret)


def reinforce_step(theta, env: MdpModel, fm: FeatureMap, utility: Utility, cfg: BaselineConfig,
                   iteration: int = 0) -> np.ndarray:
    """``theta + eta g`` with ``g`` from ``N`` fresh on-policy trajectories."""
    g, _, _ = reinforce_gradient(theta, env, fm, utility, cfg.batch_size, cfg.horizon,
                                 cfg.gamma, cfg.seed, (iteration,))
    return np.asarray(theta, dtype=float) + cfg.step_size * g


def run_reinforce(env: MdpModel, fm: FeatureMap, utility: Utility, cfg: BaselineConfig,
                  theta0=None, callback=None) -> tuple[np.ndarray, RunTrace]:
    if abs(env.discount - cfg.gamma) > 1e-15:
        raise ValueError(f"config gamma {cfg.gamma} differs from the model discount {env.discount}")
    theta = np.zeros(fm.dim) if theta0 is None else check_params(theta0, fm.dim).copy()
    trace = RunTrace()
    episodes = 0
    t_start = time.perf_counter()
    for it in range(cfg.n_iterations):
        g, lam, info = reinforce_gradient(theta, env, fm, utility, cfg.batch_size, cfg.horizon,
                                          cfg.gamma, cfg.seed, (it,))
        episodes += info.n_trajectories
        trace.episode_returns.append(info.returns)
        trace.episode_discounted_returns.append(info.discounted_returns)
        new_theta = theta + cfg.step_size * g
        if not np.all(np.isfinite(new_theta)):
            raise FloatingPointError("parameters became non-finite")
        record = IterationRecord(
            epoch=it, inner=0, episodes=episodes, samples=episodes * cfg.horizon,
            step_norm=float(np.linalg.norm(new_theta - theta)), truncated=False,
            grad_norm=float(np.linalg.norm(g)), lambda_l1=float(np.abs(lam).sum()),
            max_weight=1.0, estimate_objective=utility.value(lam),
            exact_objective=(exact_objective(env, fm, theta, utility)
                             if cfg.track_exact else float("nan")),
            wall_clock=time.perf_counter() - t_start,
        )
        trace.records.append(record)
        if callback is not None:
            callback(record, g)
        theta = new_theta
    return theta, trace


@dataclass
class VarianceComparison:
    """Resampled gradient estimates at one parameter point and a one-sided test.

    ``p_value`` is the bootstrap probability that the TSIVR-PG covariance trace is
    not below the REINFORCE one.
    """
    tsivr_grads: np.ndarray
    reinforce_grads: np.ndarray
    tsivr_trace: float
    reinforce_trace: float
    p_value: float


def _cov_trace(g: np.ndarray) -> float:
    return float(np.sum(np.var(g, axis=0, ddof=1)))


def variance_comparison(theta, env: MdpModel, fm: FeatureMap, utility: Utility, n_large: int,
                        n_small: int, horizon: int, step_size: float, radius: float,
                        n_resamples: int = 100, seed: int = 0, n_bootstrap: int = 10000) -> VarianceComparison:
    """Compare the first post-anchor TSIVR-PG estimate with REINFORCE at batch ``n_small``.

    Resample ``k`` draws a fresh anchor batch at ``theta``, takes the truncated
    step to ``theta_1`` and forms ``g_1`` from a fresh batch of ``n_small``.
    REINFORCE averages ``n_small`` fresh trajectories at the same ``theta_1``, so
    both estimators spend the same incremental budget at the evaluated point.
    """
    theta = check_params(theta, fm.dim)
    cfg = AlgoConfig(n_large=n_large, n_small=n_small, epoch_length=2, horizon=horizon,
                     step_size=step_size, radius=radius, gamma=env.discount, seed=seed, track_exact=False)
    rf_seed = seed + 1_000_003  # disjoint stream family for the baseline
    tsivr, rf = [], []
    for k in range(n_resamples):
        state, _ = epoch_anchor(theta, cfg, env, fm, utility, epoch=k)
        theta1 = truncated_step(theta, state.grad_est, step_size, radius)
        state1, _ = inner_update(state, theta1, cfg, env, fm, utility)
        tsivr.append(state1.grad_est)
        g, _, _ = reinforce_gradient(theta1, env, fm, utility, n_small, horizon, env.discount, rf_seed, (k,))
        rf.append(g)
    tsivr, rf = np.array(tsivr), np.array(rf)
    t_tr, r_tr = _cov_trace(tsivr), _cov_trace(rf)
    rng = np.random.default_rng([seed, n_resamples])
    worse = 0
    for _ in range(n_bootstrap):
        i = rng.integers(0, n_resamples, n_resamples)
        j = rng.integers(0, n_resamples, n_resamples)
        worse += _cov_trace(tsivr[i]) >= _cov_trace(rf[j])
    return VarianceComparison(tsivr, rf, t_tr, r_tr, (worse + 1) / (n_bootstrap + 1))


class Reinforce(PolicyGradientMixin, BaseEstimator):
    """REINFORCE as an estimator; ``gamma`` is taken from the model passed to ``fit``."""

    def __init__(self, batch_size=100, horizon=200, step_size=0.05, n_iterations=100,
                 feature_map="tabular", init_scale=0.0, track_exact=True, random_state=0):
        self.batch_size = batch_size
        self.horizon = horizon
        self.step_size = step_size
        self.n_iterations = n_iterations
        self.feature_map = feature_map
        self.init_scale = init_scale
        self.track_exact = track_exact
        self.random_state = random_state

    def config(self, gamma: float) -> BaselineConfig:
        return BaselineConfig(self.batch_size, self.horizon, self.step_size, self.n_iterations,
                              gamma, int(self.random_state or 0), self.track_exact)

    def fit(self, env: MdpModel, utility: Utility | None = None, theta0=None, callback=None):
        if not isinstance(env, MdpModel):
            raise TypeError(f"fit expects an MdpModel, got {type(env).__name__}")
        fm = _resolve_features(self.feature_map, env)
        utility = utility or LinearUtility(env.reward_vector())
        theta, trace = run_reinforce(env, fm, utility, self.config(env.discount),
                                     self._init_theta(fm, theta0), callback)
        self.feature_map_ = fm
        self.utility_ = utility
        self.theta_ = theta
        self.trace_ = trace
        self.n_episodes_ = trace.records[-1].episodes
        return self
