"""Input validation helpers shared by the estimators and models."""
from __future__ import annotations

import numbers

import numpy as np


def check_random_state(seed) -> np.random.Generator:
    """Turn ``None``, an int or a Generator into a ``np.random.Generator``."""
    if seed is None or isinstance(seed, (numbers.Integral, np.integer)):
        return np.random.default_rng(seed)
    if isinstance(seed, np.random.Generator):
        return seed
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def check_distribution_rows(p: np.ndarray, name: str, tol: float = 1e-12) -> None:
    """Raise ``ValueError`` unless every row along the last axis is a probability vector."""
    p = np.asarray(p)
    if not np.all(np.isfinite(p)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(p < 0):
        raise ValueError(f"{name} contains negative entries")
    sums = p.sum(axis=-1)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"{name} rows must sum to 1 (worst deviation {worst:.3e})")


def check_positive(value, name: str, integer: bool = False):
    if integer:
        if not isinstance(value, (numbers.Integral, np.integer)) or value < 1:
            raise ValueError(f"{name} must be a positive integer, got {value!r}")
        return int(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return float(value)


def check_params(theta, dim: int) -> np.ndarray:
    """Validate a parameter vector of length ``dim`` with finite entries."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dim,):
        raise ValueError(f"parameter vector must have shape ({dim},), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter vector has non-finite entries")
    return theta


def check_vector(x, size: int, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (size,):
        raise ValueError(f"{name} must have {size} entries, got {x.size}")
    return x
