"""Input validation helpers shared across the package.

All public entry points funnel array-likes through these checks so that
shape and finiteness errors surface at the boundary with a readable
message instead of deep inside a numpy kernel.
"""

from __future__ import annotations

import numpy as np


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce *x* to a 2-D float64 array and require finite entries."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={m.ndim}")
    if m.size == 0:
        raise ValueError(f"{name} must be non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce *x* to a 1-D float64 array and require finite entries."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got ndim={v.ndim}")
    if v.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def check_square(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    return m


def check_multipliable(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"dimension mismatch for product: left is {a.shape}, right is {b.shape}"
        )


def check_rank(rank: int, upper: int, name: str = "rank") -> int:
    rank = int(rank)
    if not 1 <= rank <= upper:
        raise ValueError(f"{name} must be in [1, {upper}], got {rank}")
    return rank


def check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    return beta


def check_orthonormal(q: np.ndarray, tol: float = 1e-10, name: str = "basis") -> np.ndarray:
    """Require the columns of *q* to be orthonormal within *tol* per entry."""
    q = as_matrix(q, name)
    gram = q.T @ q
    err = np.max(np.abs(gram - np.eye(q.shape[1])))
    if err > tol:
        raise ValueError(
            f"{name} columns are not orthonormal: max |Q^T Q - I| = {err:.3e} > {tol:.1e}"
        )
    return q
