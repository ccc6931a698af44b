"""Importance weights and single-trajectory occupancy / policy-gradient estimators.

Everything works on :class:`~tsivrpg.mdp.TrajectoryBatch` arrays; the
single-trajectory functions are thin wrappers over the batched ones.  Weights
are the prefix likelihood ratios ``prod_{h<=t} pi_target(a_h|s_h) / pi_behavior(a_h|s_h)``
accumulated in log space and never self-normalized.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import OccupancyVector, Trajectory, TrajectoryBatch
from .policy import FeatureMap, log_policy_matrix, policy_matrix


@dataclass(frozen=True)
class WeightSequence:
    weights: np.ndarray
    log_weights: np.ndarray


def _as_batch(tau) -> TrajectoryBatch:
    if isinstance(tau, TrajectoryBatch):
        return tau
    return TrajectoryBatch(np.asarray(tau.states)[None, :], np.asarray(tau.actions)[None, :])


def pair_index(batch: TrajectoryBatch, num_actions: int) -> np.ndarray:
    return batch.states * num_actions + batch.actions


def log_weights(batch: TrajectoryBatch, logpi_behavior: np.ndarray, logpi_target: np.ndarray) -> np.ndarray:
    """Cumulative log importance ratios, shape ``(n, H)``."""
    step = (logpi_target[batch.states, batch.actions]
            - logpi_behavior[batch.states, batch.actions])
    return np.cumsum(step, axis=1)


def weight_bound(t, grad_bound: float, distance: float):
    """Deterministic cap ``exp(2 (t+1) l_psi ||theta1 - theta2||)`` on ``omega_t``."""
    return np.exp(2.0 * (np.asarray(t) + 1) * grad_bound * distance)


def discounts(gamma: float, horizon: int) -> np.ndarray:
    return gamma ** np.arange(horizon)


def occupancy_sum(batch: TrajectoryBatch, weights: np.ndarray | None, gamma: float,
                  num_actions: int, num_pairs: int, sample_weights=None) -> np.ndarray:
    """``sum_k c_k sum_t gamma^t w_kt e_{s_kt a_kt}`` with ``c_k`` the sample weights.

    ``weights=None`` means the on-policy estimator (all weights one).
    """
    coef = np.broadcast_to(discounts(gamma, batch.horizon), batch.states.shape)
    if weights is not None:
        coef = coef * weights
    if sample_weights is not None:
        coef = coef * np.asarray(sample_weights)[:, None]
    idx = pair_index(batch, num_actions)
    return np.bincount(idx.ravel(), np.ravel(coef), minlength=num_pairs)


def pg_sum(batch: TrajectoryBatch, weights: np.ndarray | None, reward: np.ndarray, gamma: float,
           fm: FeatureMap, theta_target: np.ndarray, probs_target: np.ndarray | None = None,
           sample_weights=None) -> np.ndarray:
    """Weighted sum over trajectories of the off-policy policy-gradient estimator.

    Uses ``sum_t c_t sum_{t'<=t} score_{t'} = sum_{t'} score_{t'} sum_{t>=t'} c_t``,
    so the cost is linear in ``H``.
    """
    A = fm.num_actions
    idx = pair_index(batch, A)
    c = discounts(gamma, batch.horizon) * np.asarray(reward)[idx]
    if weights is not None:
        c = c * weights
    tail = np.cumsum(c[:, ::-1], axis=1)[:, ::-1]
    if sample_weights is not None:
        tail = tail * np.asarray(sample_weights)[:, None]
    coef = np.bincount(idx.ravel(), tail.ravel(), minlength=fm.num_states * A)
    return fm.contract_scores(coef, theta_target, probs_target)


def importance_weights(tau: Trajectory, theta1, theta2, fm: FeatureMap) -> WeightSequence:
    """Weights of ``tau`` (drawn under ``theta1``) for the target policy ``theta2``."""
    batch = _as_batch(tau)
    lw = log_weights(batch, log_policy_matrix(fm, theta1), log_policy_matrix(fm, theta2))[0]
    return WeightSequence(np.exp(lw), lw)


def occupancy_estimate(tau: Trajectory, theta1, theta2, fm: FeatureMap, gamma: float) -> OccupancyVector:
    """``sum_t gamma^t omega_t e_{s_t a_t}``; the on-policy case is the discounted empirical measure."""
    w = importance_weights(tau, theta1, theta2, fm).weights
    batch = _as_batch(tau)
    lam = occupancy_sum(batch, w[None, :], gamma, fm.num_actions, fm.num_states * fm.num_actions)
    return OccupancyVector(lam, "sampled", batch.horizon, fm.num_actions)


def pg_estimate(tau: Trajectory, theta1, theta2, fm: FeatureMap, reward, gamma: float) -> np.ndarray:
    """``sum_t gamma^t omega_t r(s_t, a_t) sum_{t'<=t} grad log pi_theta2(a_t'|s_t')``."""
    r = np.asarray(reward, dtype=float).ravel()
    if r.size != fm.num_states * fm.num_actions:
        raise ValueError(f"quasi-reward must have {fm.num_states * fm.num_actions} entries")
    w = importance_weights(tau, theta1, theta2, fm).weights
    return pg_sum(_as_batch(tau), w[None, :], r, gamma, fm, theta2, policy_matrix(fm, theta2))
