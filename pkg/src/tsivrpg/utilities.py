"""Utility functions ``F(lambda)`` of the state-action occupancy measure.

Each utility exposes its value, its gradient (the quasi-reward used by the
policy-gradient estimators) and analytically declared constants:

* ``grad_inf_bound``  -- sup of ``||grad F||_inf`` over valid occupancies
* ``smooth_l2``       -- ``||grad F(x) - grad F(y)||_inf <= smooth_l2 * ||x - y||_2``
* ``smooth_l1``       -- ``||grad F(x) - grad F(y)||_inf <= smooth_l1 * ||x - y||_1``

Valid occupancies are nonnegative with L1 norm ``1 / (1 - gamma)``.
"""
from __future__ import annotations

import numpy as np

from .validation import check_positive


class Utility:
    is_concave = True
    name = "utility"

    def value(self, lam) -> float:
        raise NotImplementedError

    def grad(self, lam) -> np.ndarray:
        raise NotImplementedError

    @property
    def grad_inf_bound(self) -> float:
        raise NotImplementedError

    smooth_l2 = 0.0
    smooth_l1 = 0.0

    def __call__(self, lam) -> float:
        return self.value(lam)

    def constants(self) -> dict:
        return {"grad_inf_bound": self.grad_inf_bound, "smooth_l2": self.smooth_l2,
                "smooth_l1": self.smooth_l1}


class LinearUtility(Utility):
    """``F(lambda) = <r, lambda>``: the expected discounted return for reward ``r``."""

    name = "linear"

    def __init__(self, reward):
        self.reward = np.asarray(reward, dtype=float).ravel().copy()
        if not np.all(np.isfinite(self.reward)):
            raise ValueError("reward must be finite")
        self.reward.flags.writeable = False

    def value(self, lam):
        return float(self.reward @ np.asarray(lam, dtype=float).ravel())

    def grad(self, lam):
        return self.reward.copy()

    @property
    def grad_inf_bound(self):
        return float(np.max(np.abs(self.reward), initial=0.0))


def _state_mass(lam, num_actions):
    # per-state mass, clipped at 0 so recursive estimates that dip negative stay in the domain
    m = np.asarray(lam, dtype=float).reshape(-1, num_actions).sum(axis=1)
    return np.maximum(m, 0.0)


class EntropyUtility(Utility):
    """Entropy of the normalized state occupancy ``mu(s) = (1-gamma) sum_a lambda(s, a)``.

    ``F = -sum_s mu(s) log(mu(s) + floor)``.  The floor keeps the gradient bounded
    where a state is never visited.
    """

    name = "entropy"

    def __init__(self, gamma: float, num_actions: int, floor: float = 1e-8):
        if not 0 < gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        self.gamma = float(gamma)
        self.num_actions = int(num_actions)
        self.floor = check_positive(floor, "floor")

    def _mu(self, lam):
        return (1 - self.gamma) * _state_mass(lam, self.num_actions)

    def value(self, lam):
        mu = self._mu(lam)
        return float(-(mu * np.log(mu + self.floor)).sum())

    def grad(self, lam):
        mu = self._mu(lam)
        g = -(1 - self.gamma) * (np.log(mu + self.floor) + mu / (mu + self.floor))
        return np.repeat(g, self.num_actions)

    @property
    def grad_inf_bound(self):
        # |log(mu + f) + mu / (mu + f)| on mu in [0, 1] peaks at an endpoint
        f = self.floor
        return (1 - self.gamma) * max(abs(np.log(f)), np.log1p(f) + 1 / (1 + f))

    @property
    def smooth_l1(self):
        # second derivative of mu log(mu + f) is at most 2 / f
        return (1 - self.gamma) ** 2 * 2.0 / self.floor

    @property
    def smooth_l2(self):
        return self.smooth_l1 * np.sqrt(self.num_actions)


class LogBarrierUtility(Utility):
    """``F(lambda) = sum_s log(sum_a lambda(s, a) + sigma)``, a smooth exploration objective."""

    name = "log_barrier"

    def __init__(self, num_actions: int, sigma: float = 0.125):
        self.num_actions = int(num_actions)
        self.sigma = check_positive(sigma, "sigma")

    def value(self, lam):
        return float(np.log(_state_mass(lam, self.num_actions) + self.sigma).sum())

    def grad(self, lam):
        return np.repeat(1.0 / (_state_mass(lam, self.num_actions) + self.sigma), self.num_actions)

    @property
    def grad_inf_bound(self):
        return 1.0 / self.sigma

    @property
    def smooth_l1(self):
        return 1.0 / self.sigma**2

    @property
    def smooth_l2(self):
        return np.sqrt(self.num_actions) / self.sigma**2


class SetDistanceUtility(Utility):
    """``F(lambda) = -min_{u in U} ||u - M lambda||^2`` for a box or a Euclidean ball ``U``.

    Give ``lower``/``upper`` for a box, or ``center``/``radius`` for a ball.
    ``gamma`` only enters the declared gradient bound.
    """

    name = "set_distance"

    def __init__(self, M, *, lower=None, upper=None, center=None, radius=None, gamma: float = 0.99):
        self.M = np.atleast_2d(np.asarray(M, dtype=float))
        k = self.M.shape[0]
        self.gamma = float(gamma)
        if lower is not None or upper is not None:
            if center is not None or radius is not None:
                raise ValueError("give either box bounds or a ball, not both")
            self.kind = "box"
            self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (k,)).copy()
            self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (k,)).copy()
            if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
                raise ValueError("box bounds must be finite")
            if np.any(self.lower > self.upper):
                raise ValueError("empty box: lower > upper")
        elif radius is not None:
            self.kind = "ball"
            self.center = (np.zeros(k) if center is None
                           else np.broadcast_to(np.asarray(center, dtype=float), (k,)).copy())
            if radius < 0:
                raise ValueError("radius must be nonnegative")
            self.radius = float(radius)
        else:
            raise ValueError("need box bounds (lower, upper) or a ball radius")

    def project(self, u):
        if self.kind == "box":
            return np.clip(u, self.lower, self.upper)
        d = u - self.center
        n = np.linalg.norm(d)
        if n <= self.radius:
            return u.copy()
        return self.center + d * (self.radius / n)

    def value(self, lam):
        u = self.M @ np.asarray(lam, dtype=float).ravel()
        return float(-np.sum((self.project(u) - u) ** 2))

    def grad(self, lam):
        u = self.M @ np.asarray(lam, dtype=float).ravel()
        return 2.0 * self.M.T @ (self.project(u) - u)

    def _anchor(self):
        return self.project(np.zeros(self.M.shape[0]))

    @property
    def grad_inf_bound(self):
        col = np.linalg.norm(self.M, axis=0).max()
        u_max = np.linalg.norm(self.M, 2) / (1 - self.gamma)
        return float(2 * col * (u_max + np.linalg.norm(self._anchor())))

    @property
    def smooth_l2(self):
        return float(2 * np.linalg.norm(self.M, axis=0).max() * np.linalg.norm(self.M, 2))

    @property
    def smooth_l1(self):
        return float(2 * np.linalg.norm(self.M, axis=0).max() ** 2)


def linear_utility(reward) -> LinearUtility:
    return LinearUtility(reward)


def entropy_utility(gamma: float, num_actions: int, floor: float = 1e-8) -> EntropyUtility:
    return EntropyUtility(gamma, num_actions, floor)


def log_barrier_utility(num_actions: int, sigma: float = 0.125) -> LogBarrierUtility:
    return LogBarrierUtility(num_actions, sigma)


def set_distance_utility(M, **region) -> SetDistanceUtility:
    return SetDistanceUtility(M, **region)
