"""Softmax policies ``pi(a|s) ∝ exp psi(s, a; theta)`` over pluggable feature maps."""
from __future__ import annotations

from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np

from .validation import check_params


class FeatureMap(ABC):
    """The logit function ``psi(s, a; theta)`` and its gradient.

    Subclasses declare ``grad_bound`` (sup of ``||grad psi||_2``) and
    ``hessian_bound`` (sup of the spectral norm of the Hessian of psi).
    """

    kind = "abstract"

    def __init__(self, num_states: int, num_actions: int, dim: int):
        self.num_states = int(num_states)
        self.num_actions = int(num_actions)
        self.dim = int(dim)

    @property
    @abstractmethod
    def grad_bound(self) -> float: ...

    @property
    @abstractmethod
    def hessian_bound(self) -> float: ...

    @abstractmethod
    def logits(self, theta: np.ndarray) -> np.ndarray:
        """All ``psi(s, a; theta)`` as an ``(S, A)`` array."""

    @abstractmethod
    def grad_table(self, theta: np.ndarray) -> np.ndarray:
        """``grad_theta psi(s, a; theta)`` for every pair, shape ``(S, A, d)``."""

    def value(self, s: int, a: int, theta: np.ndarray) -> float:
        return float(self.logits(theta)[s, a])

    def grad(self, s: int, a: int, theta: np.ndarray) -> np.ndarray:
        return self.grad_table(theta)[s, a]

    def score_table(self, theta: np.ndarray, probs: np.ndarray | None = None) -> np.ndarray:
        """``grad log pi(a|s)`` for every pair, shape ``(S, A, d)``."""
        if probs is None:
            probs = policy_matrix(self, theta)
        G = self.grad_table(theta)
        return G - np.einsum("sa,sad->sd", probs, G)[:, None, :]

    def contract_scores(self, coef: np.ndarray, theta: np.ndarray,
                        probs: np.ndarray | None = None) -> np.ndarray:
        """``sum_{s,a} coef[s, a] * grad log pi(a|s)`` as a length-``d`` vector."""
        coef = np.asarray(coef, dtype=float).reshape(self.num_states, self.num_actions)
        return np.einsum("sa,sad->d", coef, self.score_table(theta, probs))

    def describe(self) -> str:
        return f"{self.kind} states={self.num_states} actions={self.num_actions} dim={self.dim}"


class TabularFeatures(FeatureMap):
    """``psi(s, a; theta) = theta[s * A + a]``; ``grad_bound = 1``, ``hessian_bound = 0``."""

    kind = "tabular"

    def __init__(self, num_states: int, num_actions: int):
        super().__init__(num_states, num_actions, num_states * num_actions)

    @property
    def grad_bound(self) -> float:
        return 1.0

    @property
    def hessian_bound(self) -> float:
        return 0.0

    def logits(self, theta):
        return np.asarray(theta, dtype=float).reshape(self.num_states, self.num_actions)

    def grad_table(self, theta):
        return np.eye(self.dim).reshape(self.num_states, self.num_actions, self.dim)

    def grad(self, s, a, theta):
        g = np.zeros(self.dim)
        g[s * self.num_actions + a] = 1.0
        return g

    def contract_scores(self, coef, theta, probs=None):
        # row s of the result is coef[s] - (sum_a coef[s, a]) * pi(.|s)
        coef = np.asarray(coef, dtype=float).reshape(self.num_states, self.num_actions)
        if probs is None:
            probs = policy_matrix(self, theta)
        return (coef - coef.sum(axis=1, keepdims=True) * probs).ravel()


class LinearFeatures(FeatureMap):
    """``psi(s, a; theta) = <phi(s, a), theta>`` for a fixed ``(S, A, d)`` feature tensor."""

    kind = "linear"

    def __init__(self, features: np.ndarray):
        phi = np.asarray(features, dtype=float)
        if phi.ndim != 3:
            raise ValueError(f"features must have shape (S, A, d), got {phi.shape}")
        super().__init__(*phi.shape)
        self.features = phi

    @property
    def grad_bound(self) -> float:
        return float(np.linalg.norm(self.features, axis=2).max())

    @property
    def hessian_bound(self) -> float:
        return 0.0

    def logits(self, theta):
        return self.features @ np.asarray(theta, dtype=float)

    def grad_table(self, theta):
        return self.features


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def log_policy_matrix(fm: FeatureMap, theta) -> np.ndarray:
    return _log_softmax(fm.logits(theta))


def policy_matrix(fm: FeatureMap, theta) -> np.ndarray:
    """Action distributions for all states, shape ``(S, A)``; max-shifted softmax."""
    z = fm.logits(theta)
    z = np.exp(z - z.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def action_probs(fm: FeatureMap, theta, s: int) -> np.ndarray:
    return policy_matrix(fm, theta)[s]


def log_policy_grad(fm: FeatureMap, theta, s: int, a: int) -> np.ndarray:
    """``grad psi(s, a) - sum_a' pi(a'|s) grad psi(s, a')``."""
    theta = check_params(theta, fm.dim)
    probs = action_probs(fm, theta, s)
    G = fm.grad_table(theta)[s]
    return G[a] - probs @ G


def save_params(path: str | Path, theta: np.ndarray, fm: FeatureMap) -> None:
    """Write a text checkpoint: one header line, then one value per line (exact repr)."""
    theta = check_params(theta, fm.dim)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# feature_map={fm.kind} states={fm.num_states} "
                 f"actions={fm.num_actions} dim={fm.dim}\n")
        for x in theta:
            fh.write(repr(float(x)) + "\n")


def load_params(path: str | Path, fm: FeatureMap | None = None) -> tuple[np.ndarray, dict]:
    """Read a checkpoint written by :func:`save_params`; checks the header against ``fm``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing feature-map header")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        theta = np.array([float(line) for line in fh if line.strip()])
    if int(meta["dim"]) != theta.size:
        raise ValueError(f"{path}: header says dim={meta['dim']} but found {theta.size} values")
    if fm is not None and (meta["feature_map"] != fm.kind or int(meta["dim"]) != fm.dim):
        raise ValueError(f"{path}: checkpoint is for {meta['feature_map']} dim={meta['dim']}, "
                         f"not {fm.kind} dim={fm.dim}")
    return theta, meta
