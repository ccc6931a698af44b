"""Finite tabular MDPs: sampling, exact occupancy measures and value iteration."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numba
import numpy as np
import yaml

from .validation import check_distribution_rows, check_random_state

ROW_TOL = 1e-12
# dense linear solve up to this many state-action pairs, truncated series beyond
DIRECT_SOLVE_LIMIT = 4096
SERIES_TAIL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class MdpModel:
    """Finite MDP ``(S, A, P, xi, gamma)`` with an optional reward table.

    ``transition[s, a, s2]`` is the probability of moving to ``s2``.
    Arrays are copied and frozen on construction.
    """

    transition: np.ndarray
    initial_dist: np.ndarray
    discount: float
    reward: np.ndarray | None = None
    name: str = "mdp"

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        xi = np.array(self.initial_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if P.shape[0] < 1 or P.shape[1] < 1:
            raise ValueError("need at least one state and one action")
        check_distribution_rows(P, "transition", tol=ROW_TOL)
        if xi.shape != (P.shape[0],):
            raise ValueError(f"initial_dist must have shape ({P.shape[0]},), got {xi.shape}")
        check_distribution_rows(xi, "initial_dist", tol=ROW_TOL)
        if not 0.0 < float(self.discount) < 1.0:
            raise ValueError(f"discount must lie in (0, 1), got {self.discount}")
        object.__setattr__(self, "discount", float(self.discount))
        P.flags.writeable = False
        xi.flags.writeable = False
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial_dist", xi)
        if self.reward is not None:
            r = np.array(self.reward, dtype=float).reshape(P.shape[0], P.shape[1])
            if not np.all(np.isfinite(r)):
                raise ValueError("reward must be finite")
            r.flags.writeable = False
            object.__setattr__(self, "reward", r)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_pairs(self) -> int:
        return self.num_states * self.num_actions

    def reward_vector(self) -> np.ndarray:
        if self.reward is None:
            raise ValueError(f"model {self.name!r} has no reward table")
        return self.reward.ravel()

    def with_discount(self, discount: float) -> "MdpModel":
        return MdpModel(self.transition, self.initial_dist, discount, self.reward, self.name)


@dataclass(frozen=True)
class Trajectory:
    """A length-H sequence of state-action pairs."""

    states: np.ndarray
    actions: np.ndarray
    seed_tag: int = 0

    @property
    def horizon(self) -> int:
        return len(self.states)

    @property
    def steps(self) -> list[tuple[int, int]]:
        return list(zip(self.states.tolist(), self.actions.tolist()))


@dataclass(frozen=True)
class TrajectoryBatch:
    """``n`` trajectories of common horizon stored as ``(n, H)`` index arrays."""

    states: np.ndarray
    actions: np.ndarray

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def __getitem__(self, k: int) -> Trajectory:
        return Trajectory(self.states[k], self.actions[k], seed_tag=k)

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> "TrajectoryBatch":
        return cls(np.stack([t.states for t in trajs]), np.stack([t.actions for t in trajs]))


@dataclass(frozen=True)
class OccupancyVector:
    """Dense occupancy over state-action pairs, flattened as ``s * A + a``.

    ``kind`` is one of ``"exact_infinite"``, ``"exact_truncated"`` or ``"sampled"``.
    """

    entries: np.ndarray
    kind: str
    horizon: int | None = None
    num_actions: int | None = None

    def l1(self) -> float:
        return float(np.abs(self.entries).sum())

    def as_matrix(self) -> np.ndarray:
        return self.entries.reshape(-1, self.num_actions)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


PolicyLike = Union[np.ndarray, Callable[[int], np.ndarray]]


def as_policy_matrix(model: MdpModel, policy: PolicyLike) -> np.ndarray:
    """Turn a policy matrix or a ``state -> probs`` callable into an ``(S, A)`` array."""
    if callable(policy):
        pi = np.array([np.asarray(policy(s), dtype=float) for s in range(model.num_states)])
    else:
        pi = np.asarray(policy, dtype=float)
    if pi.shape != (model.num_states, model.num_actions):
        raise ValueError(
            f"policy must have shape ({model.num_states}, {model.num_actions}), got {pi.shape}"
        )
    check_distribution_rows(pi, "policy", tol=1e-9)
    return pi


def trajectory_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for the stream addressed by ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@numba.njit(cache=True)
def _pick(cdf, u):
    # first index whose cumulative mass exceeds u, clamped to the last index
    i = 0
    last = cdf.shape[0] - 1
    while i < last and u >= cdf[i]:
        i += 1
    return i


@numba.njit(cache=True)
def _rollout_kernel(pi_cdf, P_cdf, xi_cdf, u, states, actions):
    n, H = states.shape
    for k in range(n):
        s = _pick(xi_cdf, u[k, 0])
        for t in range(H):
            a = _pick(pi_cdf[s], u[k, 2 * t + 1])
            states[k, t] = s
            actions[k, t] = a
            s = _pick(P_cdf[s, a], u[k, 2 * t + 2])


def rollout(model: MdpModel, policy: np.ndarray, uniforms: np.ndarray) -> TrajectoryBatch:
    """Roll out trajectories driven by pre-drawn uniforms of shape ``(n, 2H + 1)``.

    Column 0 picks ``s_0``; columns ``2t + 1`` and ``2t + 2`` pick ``a_t`` and ``s_{t+1}``.
    The final next-state draw is consumed but not stored.  Each draw takes the
    first index whose cumulative probability exceeds the uniform.
    """
    u = np.ascontiguousarray(np.atleast_2d(uniforms), dtype=np.float64)
    n, width = u.shape
    H = (width - 1) // 2
    states = np.empty((n, H), dtype=np.int64)
    actions = np.empty((n, H), dtype=np.int64)
    _rollout_kernel(np.cumsum(policy, axis=1), _transition_cdf(model),
                    np.cumsum(model.initial_dist), u, states, actions)
    return TrajectoryBatch(states, actions)


_CDF_CACHE: dict = {}


def _transition_cdf(model: MdpModel) -> np.ndarray:
    # models are immutable, so the cumulative kernel is computed once per model
    key = id(model)
    hit = _CDF_CACHE.get(key)
    if hit is None or hit[0] is not model:
        if len(_CDF_CACHE) > 64:
            _CDF_CACHE.clear()
        hit = (model, np.cumsum(model.transition, axis=2))
        _CDF_CACHE[key] = hit
    return hit[1]


def sample_trajectory(model: MdpModel, action_probs: PolicyLike, horizon: int, rng=None) -> Trajectory:
    """Sample one trajectory: ``s_0 ~ xi``, ``a_t ~ pi(.|s_t)``, ``s_{t+1} ~ P(.|s_t, a_t)``.

    There is no early termination; absorbing states loop on themselves.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    pi = as_policy_matrix(model, action_probs)
    rng = check_random_state(rng)
    u = rng.random(2 * horizon + 1)
    batch = rollout(model, pi, u[None, :])
    return Trajectory(batch.states[0], batch.actions[0])


def sample_batch(model: MdpModel, policy: np.ndarray, horizon: int, n: int, seed: int,
                 key: Sequence[int] = ()) -> TrajectoryBatch:
    """Sample ``n`` trajectories; trajectory ``k`` uses the stream ``(seed, *key, k)``.

    Each trajectory owns its stream, so results do not depend on batching.
    """
    if horizon < 1 or n < 1:
        raise ValueError("horizon and batch size must be >= 1")
    width = 2 * horizon + 1
    u = np.empty((n, width))
    for k in range(n):
        u[k] = trajectory_stream(seed, *key, k).random(width)
    return rollout(model, policy, u)


def state_transition_matrix(model: MdpModel, policy: np.ndarray) -> np.ndarray:
    """``P_pi[s, s2] = sum_a pi(a|s) P(s2|s, a)``."""
    return np.einsum("sa,sat->st", policy, model.transition)


def exact_occupancy(model: MdpModel, policy: PolicyLike, horizon: int | None = None) -> OccupancyVector:
    """Discounted state-action occupancy of ``policy``.

    With ``horizon=None`` this is the infinite-horizon measure (L1 norm ``1/(1-gamma)``);
    otherwise the first ``horizon`` terms of the series.
    """
    pi = as_policy_matrix(model, policy)
    gamma = model.discount
    P_pi = state_transition_matrix(model, pi)
    S, A = pi.shape
    if horizon is None:
        if model.num_pairs <= DIRECT_SOLVE_LIMIT:
            try:
                d = np.linalg.solve(np.eye(S) - gamma * P_pi.T, model.initial_dist)
            except np.linalg.LinAlgError as exc:
                raise ArithmeticError("occupancy linear solve failed") from exc
        else:
            d = _state_series(model.initial_dist, P_pi, gamma, None)
        d = np.maximum(d, 0.0)
        return OccupancyVector((d[:, None] * pi).ravel(), "exact_infinite", None, A)
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    d = _state_series(model.initial_dist, P_pi, gamma, horizon)
    return OccupancyVector((d[:, None] * pi).ravel(), "exact_truncated", horizon, A)


def _state_series(xi, P_pi, gamma, horizon):
    d_t = xi.copy()
    total = np.zeros_like(xi)
    t = 0
    while True:
        total += gamma**t * d_t
        t += 1
        if horizon is not None and t >= horizon:
            return total
        if horizon is None and gamma**t / (1 - gamma) < SERIES_TAIL_TOL:
            return total
        d_t = P_pi.T @ d_t


def policy_evaluation(model: MdpModel, policy: PolicyLike, reward: np.ndarray) -> np.ndarray:
    """State values of ``policy`` for a reward table, by a direct linear solve."""
    pi = as_policy_matrix(model, policy)
    r = np.asarray(reward, dtype=float).reshape(pi.shape)
    P_pi = state_transition_matrix(model, pi)
    r_pi = (pi * r).sum(axis=1)
    return np.linalg.solve(np.eye(model.num_states) - model.discount * P_pi, r_pi)


@dataclass
class ValueIterationResult:
    values: np.ndarray
    optimal_value: float
    policy: np.ndarray
    n_iter: int

    def __iter__(self):
        # unpacks as (values, optimal_value)
        return iter((self.values, self.optimal_value))


def value_iteration(model: MdpModel, reward: np.ndarray | None = None, tol: float = 1e-10,
                    max_iter: int = 1_000_000) -> ValueIterationResult:
    """Bellman optimality iteration until the sup-norm change is below ``tol (1-gamma)/gamma``.

    Returns state values, ``<xi, V*>`` and a greedy deterministic policy.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = model.reward if reward is None else np.asarray(reward, dtype=float)
    if r is None:
        raise ValueError("no reward given and the model has none")
    r = r.reshape(model.num_states, model.num_actions)
    if not np.all(np.isfinite(r)):
        raise ValueError("reward must be finite")
    gamma = model.discount
    threshold = tol * (1 - gamma) / gamma
    V = np.zeros(model.num_states)
    for it in range(1, max_iter + 1):
        Q = r + gamma * model.transition @ V
        V_new = Q.max(axis=1)
        delta = np.max(np.abs(V_new - V))
        V = V_new
        if delta < threshold:
            break
    greedy = np.zeros_like(r)
    greedy[np.arange(model.num_states), Q.argmax(axis=1)] = 1.0
    return ValueIterationResult(V, float(model.initial_dist @ V), greedy, it)


def load_mdp(path: str | Path) -> MdpModel:
    """Read an MDP from a YAML file.

    Expected keys: ``num_states``, ``num_actions``, ``discount``, ``initial_dist``,
    ``transitions`` (rows ``[s, a, [[s2, p], ...]]``) and optionally ``reward``
    (an ``S x A`` nested list) and ``name``.
    """
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return mdp_from_dict(doc, default_name=Path(path).stem)


def mdp_from_dict(doc: dict, default_name: str = "mdp") -> MdpModel:
    try:
        S, A = int(doc["num_states"]), int(doc["num_actions"])
        P = np.zeros((S, A, S))
        seen = set()
        for row in doc["transitions"]:
            s, a, outcomes = row
            if (s, a) in seen:
                raise ValueError(f"duplicate transition row for ({s}, {a})")
            seen.add((s, a))
            for s2, p in outcomes:
                P[int(s), int(a), int(s2)] += float(p)
        missing = [(s, a) for s in range(S) for a in range(A) if (s, a) not in seen]
        if missing:
            raise ValueError(f"missing transition rows for {missing[:5]}")
        reward = doc.get("reward")
        return MdpModel(P, doc["initial_dist"], doc["discount"],
                        None if reward is None else np.asarray(reward, dtype=float),
                        doc.get("name", default_name))
    except KeyError as exc:
        raise ValueError(f"MDP description is missing key {exc}") from None


def mdp_to_dict(model: MdpModel) -> dict:
    rows = []
    for s in range(model.num_states):
        for a in range(model.num_actions):
            nz = np.flatnonzero(model.transition[s, a])
            rows.append([s, a, [[int(s2), float(model.transition[s, a, s2])] for s2 in nz]])
    doc = {
        "name": model.name,
        "num_states": model.num_states,
        "num_actions": model.num_actions,
        "discount": model.discount,
        "initial_dist": model.initial_dist.tolist(),
        "transitions": rows,
    }
    if model.reward is not None:
        doc["reward"] = model.reward.tolist()
    return doc


def save_mdp(model: MdpModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(mdp_to_dict(model), fh, sort_keys=False)
