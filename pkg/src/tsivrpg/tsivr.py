"""Truncated stochastic incremental variance-reduced policy gradient (TSIVR-PG).

Each epoch opens with a large-batch anchor (``N`` trajectories) for the
occupancy, quasi-reward and gradient estimates; the following ``m - 1``
iterations correct those estimates recursively from ``B`` fresh trajectories,
reweighting them for the previous iterate.  Every parameter step is clipped to
norm ``delta`` which keeps the importance weights between consecutive iterates
bounded by ``exp(2 H l_psi delta)``.
"""
from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .estimators import log_weights, occupancy_sum, pg_sum
from .mdp import MdpModel, TrajectoryBatch, exact_occupancy, sample_batch
from .policy import FeatureMap, TabularFeatures, log_policy_matrix, policy_matrix, save_params
from .utilities import LinearUtility, Utility
from .validation import check_params, check_positive

WEIGHT_GUARD = 1e12


class WeightExplosionError(FloatingPointError):
    """An importance weight exceeded the guard; only expected with truncation disabled."""


@dataclass(frozen=True)
class AlgoConfig:
    n_large: int = 100          # N, anchor batch
    n_small: int = 10           # B, inner batch
    epoch_length: int = 10      # m
    horizon: int = 200          # H
    step_size: float = 0.1      # eta
    radius: float = 0.01        # delta
    n_epochs: int = 10          # T
    gamma: float = 0.99
    seed: int = 0
    truncation: bool = True
    track_exact: bool = True
    weight_guard: float = WEIGHT_GUARD

    def __post_init__(self):
        for name in ("n_large", "n_small", "epoch_length", "horizon", "n_epochs"):
            check_positive(getattr(self, name), name, integer=True)
        check_positive(self.step_size, "step_size")
        check_positive(self.radius, "radius")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")

    @property
    def episodes_per_epoch(self) -> int:
        return self.n_large + (self.epoch_length - 1) * self.n_small

    @property
    def total_samples(self) -> int:
        return self.n_epochs * self.episodes_per_epoch * self.horizon


@dataclass
class EpochState:
    theta: np.ndarray
    lambda_est: np.ndarray
    quasi_reward: np.ndarray
    quasi_reward_prev: np.ndarray
    grad_est: np.ndarray
    epoch: int = 0
    inner: int = 0


@dataclass
class BatchInfo:
    """What one batch cost and what it looked like."""

    n_trajectories: int
    max_weight: float
    returns: np.ndarray
    discounted_returns: np.ndarray


@dataclass
class IterationRecord:
    epoch: int
    inner: int
    episodes: int
    samples: int
    step_norm: float
    truncated: bool
    grad_norm: float
    lambda_l1: float
    max_weight: float
    estimate_objective: float
    exact_objective: float
    wall_clock: float = field(default=0.0, compare=False)


# wall_clock is kept in memory but left out of the CSV so reruns are byte-identical
TRACE_COLUMNS = [f.name for f in fields(IterationRecord) if f.name != "wall_clock"]


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    episode_discounted_returns: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def returns(self, discounted: bool = False) -> np.ndarray:
        return np.concatenate(self.episode_discounted_returns if discounted else self.episode_returns)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([_fmt(getattr(r, c)) for c in TRACE_COLUMNS])


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.10g" % x


def _batch_returns(env: MdpModel, batch: TrajectoryBatch, gamma: float):
    if env.reward is None:
        nan = np.full(batch.size, np.nan)
        return nan, nan
    r = env.reward[batch.states, batch.actions]
    return r.sum(axis=1), r @ (gamma ** np.arange(batch.horizon))


def _draw(env, fm, theta, cfg, n, key):
    probs = policy_matrix(fm, theta)
    return probs, sample_batch(env, probs, cfg.horizon, n, cfg.seed, key)


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def anchor_from_batch(theta, batch: TrajectoryBatch, fm: FeatureMap, utility: Utility, gamma: float,
                      sample_weights=None, epoch: int = 0) -> EpochState:
    """Anchor estimates from a given batch drawn under ``theta``.

    ``sample_weights`` default to ``1/n``; passing exact trajectory probabilities
    turns the batch mean into an expectation.
    """
    sw = _uniform(batch.size) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    probs = policy_matrix(fm, theta)
    lam = occupancy_sum(batch, None, gamma, fm.num_actions, fm.num_states * fm.num_actions, sw)
    r = utility.grad(lam)
    g = pg_sum(batch, None, r, gamma, fm, theta, probs, sw)
    return EpochState(np.array(theta, dtype=float), lam, r, r.copy(), g, epoch, 0)


def inner_from_batch(state: EpochState, theta, batch: TrajectoryBatch, fm: FeatureMap,
                     utility: Utility, gamma: float, sample_weights=None,
                     weight_guard: float = np.inf) -> tuple[EpochState, float]:
    """Recursive update from a given batch drawn under ``theta``; also returns the max weight."""
    sw = _uniform(batch.size) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    theta = np.array(theta, dtype=float)
    j = state.inner + 1
    lw = log_weights(batch, log_policy_matrix(fm, theta), log_policy_matrix(fm, state.theta))
    w = np.exp(lw)
    max_w = float(w.max())
    if not max_w <= weight_guard:
        raise WeightExplosionError(
            f"importance weight {max_w:.3e} exceeds {weight_guard:.0e} "
            f"(epoch {state.epoch}, iteration {j}, step {np.linalg.norm(theta - state.theta):.3e})")
    A = fm.num_actions
    n_pairs = fm.num_states * A
    lam = (occupancy_sum(batch, None, gamma, A, n_pairs, sw)
           - occupancy_sum(batch, w, gamma, A, n_pairs, sw)
           + state.lambda_est)
    r = utility.grad(lam)
    g = (pg_sum(batch, None, state.quasi_reward, gamma, fm, theta, policy_matrix(fm, theta), sw)
         - pg_sum(batch, w, state.quasi_reward_prev, gamma, fm, state.theta,
                  policy_matrix(fm, state.theta), sw)
         + state.grad_est)
    return EpochState(theta, lam, r, state.quasi_reward, g, state.epoch, j), max_w


def epoch_anchor(theta, cfg: AlgoConfig, env: MdpModel, fm: FeatureMap, utility: Utility,
                 epoch: int = 0) -> tuple[EpochState, BatchInfo]:
    """Large-batch estimates at the start of an epoch.

    ``lambda_0`` is the mean on-policy occupancy of ``N`` trajectories,
    ``r_0 = grad F(lambda_0)`` and ``g_0`` the mean on-policy gradient estimate
    with quasi-reward ``r_0`` on the same batch.
    """
    theta = check_params(theta, fm.dim)
    _, batch = _draw(env, fm, theta, cfg, cfg.n_large, (epoch, 0))
    state = anchor_from_batch(theta, batch, fm, utility, cfg.gamma, epoch=epoch)
    ret, dret = _batch_returns(env, batch, cfg.gamma)
    return state, BatchInfo(batch.size, 1.0, ret, dret)


def inner_update(state: EpochState, theta, cfg: AlgoConfig, env: MdpModel, fm: FeatureMap,
                 utility: Utility) -> tuple[EpochState, BatchInfo]:
    """Recursive correction from ``theta_{j-1} = state.theta`` to ``theta_j = theta``.

    Both correction terms reuse one batch of ``B`` trajectories drawn under
    ``theta_j``.  The on-policy gradient term uses ``r_{j-1}`` and the reweighted
    term ``r_{j-2}``, which is what ``state.quasi_reward_prev`` holds.
    """
    theta = check_params(theta, fm.dim)
    _, batch = _draw(env, fm, theta, cfg, cfg.n_small, (state.epoch, state.inner + 1))
    new, max_w = inner_from_batch(state, theta, batch, fm, utility, cfg.gamma,
                                  weight_guard=cfg.weight_guard)
    ret, dret = _batch_returns(env, batch, cfg.gamma)
    return new, BatchInfo(batch.size, max_w, ret, dret)


def truncated_step(theta, g, step_size: float, radius: float, truncation: bool = True) -> np.ndarray:
    """``theta + eta g`` if ``eta ||g|| <= delta``, else ``theta + delta g / ||g||``."""
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(g, dtype=float)
    norm = np.linalg.norm(g)
    if not truncation or step_size * norm <= radius:
        return theta + step_size * g
    return theta + (radius / norm) * g


def gradient_mapping(theta, exact_grad, step_size: float, radius: float) -> np.ndarray:
    """``(theta_+ - theta) / eta`` with ``theta_+`` the truncated step along ``exact_grad``."""
    theta = np.asarray(theta, dtype=float)
    return (truncated_step(theta, exact_grad, step_size, radius) - theta) / step_size


@dataclass(frozen=True)
class Schedule:
    horizon: int
    radius: float
    n_small: int
    epoch_length: int
    n_large: int
    n_epochs: int
    n_epochs_global: int
    total_samples: int
    total_samples_global: int


def _ceil(x: float) -> int:
    # tolerate float noise such as 1 / 0.1 ** 2 = 100.00000000000001
    return int(math.ceil(x - 1e-9))


def schedule_from_epsilon(eps: float, gamma: float, grad_bound: float = 1.0) -> Schedule:
    """Batch sizes, horizon and radius for target accuracy ``eps``.

    ``H = 2 log(1/eps) / (1-gamma)``, ``delta = 1 / (2 H l_psi)``, ``B = m = 1/eps``,
    ``N = 1/eps^2``; ``T = 1/eps`` epochs for stationarity, ``log2(1/eps)`` for
    global optimality.  Sample totals are ``T m (B H + N)`` and ``T ((m-1) B + N) H``.
    """
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    H = _ceil(2 * math.log(1 / eps) / (1 - gamma))
    delta = 1.0 / (2 * H * grad_bound)
    B = m = _ceil(1 / eps)
    N = _ceil(eps ** -2)
    T = _ceil(1 / eps)
    T_global = max(1, _ceil(math.log2(1 / eps)))
    return Schedule(H, delta, B, m, N, T, T_global,
                    T * m * (B * H + N), T_global * ((m - 1) * B + N) * H)


@dataclass(frozen=True)
class Constants:
    L_theta: float
    C1: float
    C2: float
    C3: float
    C4: float
    step_size: float
    step_size_global: float
    grad_bound: float
    hessian_bound: float
    delta: float

    def c_omega(self, t):
        """Variance factor ``t (4 l_psi^2 (t + 1/2) + 2 L_psi) (e^{4 delta t} + 1)``."""
        lp, Lp = self.grad_bound, self.hessian_bound
        return t * (4 * lp**2 * (t + 0.5) + 2 * Lp) * (np.exp(4 * self.delta * t) + 1)


def compute_constants(grad_bound: float, hessian_bound: float, grad_inf_bound: float,
                      smooth_l2: float, smooth_l1: float, gamma: float, horizon: int,
                      delta: float) -> Constants:
    """Smoothness constant of ``theta -> F(lambda(theta))``, the gradient-error
    constants ``C1..C4`` and the step sizes they imply."""
    lp, Lp, li, Ll, Lli = grad_bound, hessian_bound, grad_inf_bound, smooth_l2, smooth_l1
    q = 1.0 - gamma
    H = horizon
    L_theta = 4 * Lli * lp**2 / q**4 + 8 * lp**2 * li / q**3 + 2 * li * (Lp + lp**2) / q**2
    if 2 * H * lp * delta > 700:
        raise ValueError("2*H*grad_bound*delta is too large; the weight bound overflows")
    wexp = math.exp(2 * H * lp * delta) + 1
    C1 = 112 * lp**2 * Ll**2 / q**6 + 12 * li**2 / q**4
    C2 = 32 * lp**2 * Ll**2 / q**6 + 64 * lp**2 * li**2 * ((H + 1) ** 2 / q**2 + 1 / q**4)
    C3 = (48 * (lp + Lp) ** 2 * li**2 / q**4
          + 96 * H * li**2 * (8 * lp**2 + Lp) * wexp / q**5 * (12 * li**2 + 4 * Ll**2 / (3 * q**2)))
    C4 = 32 * H * lp**2 * Ll**2 * (8 * lp**2 + Lp) * wexp / q**7
    eta = 1.0 / (1 + (C3 + C4) / L_theta**2) / (2 * L_theta)
    eta_global = 1.0 / (2 * L_theta + 8 * (C3 + C4) / L_theta)
    if not (eta > 0 and eta_global > 0):
        raise ValueError("constants are too large for a representable step size")
    return Constants(L_theta, C1, C2, C3, C4, eta, eta_global, lp, Lp, delta)


def exact_objective(env: MdpModel, fm: FeatureMap, theta, utility: Utility) -> float:
    """``F(lambda(theta))`` with the infinite-horizon occupancy."""
    return utility.value(exact_occupancy(env, policy_matrix(fm, theta)).entries)


def state_digest(state: EpochState) -> str:
    """SHA-256 over the estimator state, for checkpoint manifests."""
    h = hashlib.sha256()
    for arr in (state.theta, state.lambda_est, state.quasi_reward, state.quasi_reward_prev,
                state.grad_est):
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    return h.hexdigest()


def _checkpoint(directory: Path, epoch: int, theta, state: EpochState, fm: FeatureMap):
    directory.mkdir(parents=True, exist_ok=True)
    save_params(directory / f"epoch_{epoch:04d}.params", theta, fm)
    with open(directory / "manifest.csv", "a", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{epoch},epoch_{epoch:04d}.params,{state_digest(state)}\n")


def run(env: MdpModel, fm: FeatureMap, utility: Utility, cfg: AlgoConfig, theta0=None,
        callback=None, checkpoint_dir=None) -> tuple[np.ndarray, RunTrace]:
    """Run ``cfg.n_epochs`` epochs of ``cfg.epoch_length`` iterations each.

    Returns the last iterate and the per-iteration trace.  ``callback(record, state)``
    is called after every iteration.  With ``checkpoint_dir`` the parameters that
    open the next epoch are written after each epoch, and a manifest line records a
    digest of the final estimator state.
    """
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        (checkpoint_dir / "manifest.csv").unlink(missing_ok=True)
    if abs(env.discount - cfg.gamma) > 1e-15:
        raise ValueError(f"config gamma {cfg.gamma} differs from the model discount {env.discount}")
    theta = np.zeros(fm.dim) if theta0 is None else check_params(theta0, fm.dim).copy()
    trace = RunTrace()
    episodes = 0
    t_start = time.perf_counter()
    for epoch in range(cfg.n_epochs):
        state = None
        for j in range(cfg.epoch_length):
            if j == 0:
                state, info = epoch_anchor(theta, cfg, env, fm, utility, epoch)
            else:
                state, info = inner_update(state, theta, cfg, env, fm, utility)
            episodes += info.n_trajectories
            trace.episode_returns.append(info.returns)
            trace.episode_discounted_returns.append(info.discounted_returns)
            g = state.grad_est
            gnorm = float(np.linalg.norm(g))
            new_theta = truncated_step(theta, g, cfg.step_size, cfg.radius, cfg.truncation)
            step = float(np.linalg.norm(new_theta - theta))
            # the difference new - old carries rounding of order eps * ||theta||
            slack = 4 * np.finfo(float).eps * float(np.linalg.norm(theta))
            if cfg.truncation and step > cfg.radius * (1 + 1e-12) + slack:
                raise AssertionError(f"step {step} exceeds radius {cfg.radius}")
            if not np.all(np.isfinite(new_theta)):
                raise FloatingPointError("parameters became non-finite")
            record = IterationRecord(
                epoch=epoch, inner=j, episodes=episodes, samples=episodes * cfg.horizon,
                step_norm=step, truncated=bool(cfg.step_size * gnorm > cfg.radius),
                grad_norm=gnorm, lambda_l1=float(np.abs(state.lambda_est).sum()),
                max_weight=info.max_weight,
                estimate_objective=utility.value(state.lambda_est),
                exact_objective=(exact_objective(env, fm, theta, utility)
                                 if cfg.track_exact else float("nan")),
                wall_clock=time.perf_counter() - t_start,
            )
            trace.records.append(record)
            if callback is not None:
                callback(record, state)
            theta = new_theta
        if checkpoint_dir is not None:
            _checkpoint(checkpoint_dir, epoch, theta, state, fm)
    return theta, trace


def _resolve_features(feature_map, env: MdpModel) -> FeatureMap:
    if feature_map == "tabular":
        return TabularFeatures(env.num_states, env.num_actions)
    if isinstance(feature_map, FeatureMap):
        if (feature_map.num_states, feature_map.num_actions) != (env.num_states, env.num_actions):
            raise ValueError("feature map does not match the environment's state/action spaces")
        return feature_map
    raise ValueError(f"feature_map must be 'tabular' or a FeatureMap, got {feature_map!r}")


class PolicyGradientMixin:
    """Prediction and scoring shared by the fitted policy-gradient estimators."""

    def _check_fitted(self):
        if not hasattr(self, "theta_"):
            raise AttributeError(f"{type(self).__name__} is not fitted yet; call fit first")

    def _init_theta(self, fm: FeatureMap, theta0):
        if theta0 is not None:
            return check_params(theta0, fm.dim)
        if self.init_scale > 0:
            rng = np.random.default_rng([int(self.random_state or 0), 2**31 - 1])
            return self.init_scale * rng.standard_normal(fm.dim)
        return np.zeros(fm.dim)

    def predict_proba(self, states=None) -> np.ndarray:
        """Action probabilities of the fitted policy, one row per state."""
        self._check_fitted()
        pi = policy_matrix(self.feature_map_, self.theta_)
        return pi if states is None else pi[np.asarray(states, dtype=int)]

    def predict(self, states=None) -> np.ndarray:
        """Most likely action per state."""
        return self.predict_proba(states).argmax(axis=1)

    def score(self, env: MdpModel, utility: Utility | None = None) -> float:
        """Exact objective ``F(lambda(theta))`` of the fitted policy on ``env``."""
        self._check_fitted()
        utility = utility or LinearUtility(env.reward_vector())
        return exact_objective(env, self.feature_map_, self.theta_, utility)


class TSIVRPG(PolicyGradientMixin, BaseEstimator):
    """TSIVR-PG as an estimator: ``fit(env, utility)`` learns softmax policy parameters.

    Parameters mirror :class:`AlgoConfig`; ``gamma`` is taken from the model.
    After fitting, ``theta_`` holds the last iterate and ``trace_`` the run trace.
    """

    def __init__(self, n_large=100, n_small=10, epoch_length=10, horizon=200, step_size=0.1,
                 radius=0.01, n_epochs=10, truncation=True, feature_map="tabular",
                 init_scale=0.0, track_exact=True, random_state=0):
        self.n_large = n_large
        self.n_small = n_small
        self.epoch_length = epoch_length
        self.horizon = horizon
        self.step_size = step_size
        self.radius = radius
        self.n_epochs = n_epochs
        self.truncation = truncation
        self.feature_map = feature_map
        self.init_scale = init_scale
        self.track_exact = track_exact
        self.random_state = random_state

    def config(self, gamma: float) -> AlgoConfig:
        return AlgoConfig(
            n_large=self.n_large, n_small=self.n_small, epoch_length=self.epoch_length,
            horizon=self.horizon, step_size=self.step_size, radius=self.radius,
            n_epochs=self.n_epochs, gamma=gamma, seed=int(self.random_state or 0),
            truncation=self.truncation, track_exact=self.track_exact)

    def fit(self, env: MdpModel, utility: Utility | None = None, theta0=None, callback=None):
        if not isinstance(env, MdpModel):
            raise TypeError(f"fit expects an MdpModel, got {type(env).__name__}")
        fm = _resolve_features(self.feature_map, env)
        utility = utility or LinearUtility(env.reward_vector())
        cfg = self.config(env.discount)
        theta, trace = run(env, fm, utility, cfg, self._init_theta(fm, theta0), callback)
        self.feature_map_ = fm
        self.utility_ = utility
        self.theta_ = theta
        self.trace_ = trace
        self.n_episodes_ = trace.records[-1].episodes
        return self


def config_with(cfg: AlgoConfig, **changes) -> AlgoConfig:
    return replace(cfg, **changes)


def config_dict(cfg: AlgoConfig) -> dict:
    return asdict(cfg)
