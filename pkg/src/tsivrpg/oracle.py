"""Ground truth for tiny MDPs: exhaustive trajectory enumeration and finite differences.

Nothing here samples.  Expectations are exact sums over every length-H
trajectory, weighted by its probability.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .estimators import pg_estimate
from .mdp import MdpModel, Trajectory, TrajectoryBatch, as_policy_matrix, exact_occupancy
from .policy import FeatureMap, policy_matrix

DEFAULT_CAP = 10**6
FD_STEP = 1e-5


class EnumerationLimitError(ValueError):
    """The trajectory space is larger than the configured cap."""


@dataclass(frozen=True)
class EnumerationTable:
    """All positive-probability trajectories of length H with their exact probabilities."""

    trajectories: TrajectoryBatch
    probs: np.ndarray

    def __len__(self):
        return len(self.probs)

    def __iter__(self):
        for k in range(len(self.probs)):
            yield self.trajectories[k], float(self.probs[k])


def enumerate_trajectories(model: MdpModel, policy, horizon: int, cap: int = DEFAULT_CAP) -> EnumerationTable:
    """Expand ``xi x prod pi x prod P`` step by step, dropping zero-probability branches."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    pi = as_policy_matrix(model, policy)
    S, A = pi.shape
    if float(S * A) ** horizon > cap:
        raise EnumerationLimitError(
            f"(|S||A|)^H = {S * A}^{horizon} exceeds the enumeration cap {cap}")
    # prefixes end in a state whose action is not chosen yet
    states = np.flatnonzero(model.initial_dist > 0)[:, None]
    actions = np.zeros((len(states), 0), dtype=np.int64)
    probs = model.initial_dist[states[:, 0]]
    for t in range(horizon):
        s = states[:, -1]
        k, a = np.nonzero(pi[s] > 0)
        probs = probs[k] * pi[s[k], a]
        states, actions = states[k], np.column_stack([actions[k], a])
        if t == horizon - 1:
            break
        k, s2 = np.nonzero(model.transition[states[:, -1], actions[:, -1]] > 0)
        probs = probs[k] * model.transition[states[k, -1], actions[k, -1], s2]
        states, actions = np.column_stack([states[k], s2]), actions[k]
    return EnumerationTable(TrajectoryBatch(states.astype(np.int64), actions.astype(np.int64)), probs)


def exact_expectation(table: EnumerationTable, estimator: Callable[[Trajectory], np.ndarray]) -> np.ndarray:
    """``sum_tau p(tau) * estimator(tau)`` over the table."""
    total = None
    for tau, p in table:
        v = p * np.asarray(estimator(tau), dtype=float)
        total = v if total is None else total + v
    return total


def truncated_objective(model: MdpModel, fm: FeatureMap, theta, utility, horizon: int | None) -> float:
    lam = exact_occupancy(model, policy_matrix(fm, theta), horizon).entries
    return utility.value(lam)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, step: float = FD_STEP) -> np.ndarray:
    """Central differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def exact_policy_gradient(model: MdpModel, fm: FeatureMap, theta, utility, horizon: int,
                          method: str = "enumeration", cap: int = DEFAULT_CAP) -> np.ndarray:
    """Gradient of ``theta -> F(lambda_H(theta))``.

    ``method="enumeration"`` takes the exact expectation of the on-policy
    estimator with quasi-reward ``grad F(lambda_H(theta))``;
    ``method="finite_difference"`` differentiates the exact truncated objective.
    """
    theta = np.asarray(theta, dtype=float)
    if method == "finite_difference":
        return finite_difference_gradient(
            lambda th: truncated_objective(model, fm, th, utility, horizon), theta)
    if method != "enumeration":
        raise ValueError(f"unknown method {method!r}")
    pi = policy_matrix(fm, theta)
    r = utility.grad(exact_occupancy(model, pi, horizon).entries)
    table = enumerate_trajectories(model, pi, horizon, cap)
    return exact_expectation(
        table, lambda tau: pg_estimate(tau, theta, theta, fm, r, model.discount))
