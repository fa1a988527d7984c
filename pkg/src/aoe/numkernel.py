"""Numeric primitives: stable softmax family and divergences.

Vectors are 1-D float64 arrays; batched variants operate along the last
axis so a ``(N, K)`` logit matrix is handled row by row.
"""

from __future__ import annotations

import numpy as np

from aoe.exceptions import DivergenceUndefinedError, InvalidArgumentError

# floor applied to probabilities only right before a log inside divergences
PROB_FLOOR = 1e-300


def _as_finite(z, name="z") -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(z)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return z


def _check_temperature(T) -> float:
    T = float(T)
    if not np.isfinite(T) or T <= 0.0:
        raise InvalidArgumentError(f"temperature must be finite and > 0, got {T}")
    return T


def log_sum_exp(z) -> np.ndarray | float:
    """log(sum(exp(z))) along the last axis, shifted by the max."""
    z = _as_finite(z)
    zmax = np.max(z, axis=-1, keepdims=True)
    out = np.log(np.sum(np.exp(z - zmax), axis=-1)) + zmax[..., 0]
    return float(out) if out.ndim == 0 else out


def log_softmax(z, T: float = 1.0) -> np.ndarray:
    z = _as_finite(z) / _check_temperature(T)
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def softmax(z, T: float = 1.0) -> np.ndarray:
    """Temperature softmax ``s(z / T)`` along the last axis."""
    z = _as_finite(z) / _check_temperature(T)
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def _check_pair(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise InvalidArgumentError(f"shape mismatch: {p.shape} vs {q.shape}")
    if p.size == 0:
        raise InvalidArgumentError("empty distribution")
    if np.any(p < 0) or np.any(q < 0):
        raise InvalidArgumentError("probabilities must be nonnegative")
    if np.any((q == 0.0) & (p > 0.0)):
        raise DivergenceUndefinedError("q has zero mass where p is positive")
    return p, q


def _plogp_over(p, q) -> np.ndarray:
    safe_p = np.maximum(p, PROB_FLOOR)
    safe_q = np.maximum(q, PROB_FLOOR)
    return np.where(p > 0.0, p * (np.log(safe_p) - np.log(safe_q)), 0.0)


def kl_divergence(p, q) -> np.ndarray | float:
    """KL(p || q) with 0 log 0 = 0, along the last axis."""
    p, q = _check_pair(p, q)
    out = np.maximum(np.sum(_plogp_over(p, q), axis=-1), 0.0)
    return float(out) if out.ndim == 0 else out


def entropy(p) -> np.ndarray | float:
    p = np.asarray(p, dtype=np.float64)
    terms = np.where(p > 0.0, p * np.log(np.maximum(p, PROB_FLOOR)), 0.0)
    out = -np.sum(terms, axis=-1)
    return float(out) if out.ndim == 0 else out


def cross_entropy(target, pred) -> np.ndarray | float:
    """-sum(target * log(pred)); equals entropy(target) + KL(target || pred)."""
    target, pred = _check_pair(target, pred)
    terms = np.where(target > 0.0, target * np.log(np.maximum(pred, PROB_FLOOR)), 0.0)
    out = -np.sum(terms, axis=-1)
    return float(out) if out.ndim == 0 else out


def uniform(K: int) -> np.ndarray:
    return np.full(K, 1.0 / K)
