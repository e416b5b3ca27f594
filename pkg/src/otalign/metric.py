"""Scale-invariant ground metric between embedding rows, with analytic gradients.

The distance is ``sqrt(2 - 2*cos(a, b))``, which equals the Euclidean distance
between the L2-normalized inputs and is a true metric (unlike the plain cosine
distance ``1 - cos``, which violates the triangle inequality).
"""
from __future__ import annotations

import numpy as np

DEGENERATE_NORM = 1e-12
# Derivative of sqrt near zero is clamped to its value at this distance, so
# gradients stay bounded when a mapped vector nearly coincides with a target.
SQRT_GRAD_FLOOR = 1e-6

__all__ = [
    "sqrt_cos_dist",
    "pairwise_distance_matrix",
    "pairwise_distance_backward",
]


def _normalize_rows(a: np.ndarray, name: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms < DEGENERATE_NORM):
        bad = int(np.argmin(norms))
        raise ValueError(f"{name} row {bad} is degenerate (norm {norms[bad]:.3e})")
    return a / norms[:, None], norms


def sqrt_cos_dist(a: np.ndarray, b: np.ndarray) -> float:
    """Distance ``sqrt(max(0, 2 - 2*cos(a, b)))`` between two nonzero vectors.

    Lies in [0, 2] and is invariant to positive rescaling of either argument.
    The clamp at zero guards against round-off driving ``2 - 2*cos`` slightly
    negative for near-identical inputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < DEGENERATE_NORM or nb < DEGENERATE_NORM:
        raise ValueError("degenerate (near-zero) input vector")
    cos = float(np.dot(a, b) / (na * nb))
    return float(np.sqrt(max(0.0, 2.0 - 2.0 * cos)))


def pairwise_distance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs distance matrix with entry (i, j) = sqrt_cos_dist(a[i], b[j]).

    Computed by normalizing rows, taking the Gram product, and mapping
    ``x -> sqrt(max(0, 2 - 2x))`` elementwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"column dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    ahat, _ = _normalize_rows(a, "first argument")
    bhat, _ = _normalize_rows(b, "second argument")
    gram = ahat @ bhat.T
    return np.sqrt(np.maximum(0.0, 2.0 - 2.0 * gram))


def pairwise_distance_backward(
    a: np.ndarray, b: np.ndarray, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum(upstream * pairwise_distance_matrix(a, b))`` w.r.t. both inputs.

    Differentiates through the row normalization and the square root; where the
    distance falls below ``SQRT_GRAD_FLOOR`` the square-root derivative is held
    at its value at that floor.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    ahat, na = _normalize_rows(a, "first argument")
    bhat, nb = _normalize_rows(b, "second argument")
    gram = ahat @ bhat.T
    dist = np.sqrt(np.maximum(0.0, 2.0 - 2.0 * gram))
    if upstream.shape != dist.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match {dist.shape}")
    # d dist / d gram = -1 / dist, clamped near zero distance
    dgram = upstream * (-1.0 / np.maximum(dist, SQRT_GRAD_FLOOR))
    dahat = dgram @ bhat
    dbhat = dgram.T @ ahat
    da = (dahat - np.sum(dahat * ahat, axis=1, keepdims=True) * ahat) / na[:, None]
    db = (dbhat - np.sum(dbhat * bhat, axis=1, keepdims=True) * bhat) / nb[:, None]
    return da, db
