"""Balanced subspace selection from a pair of task covariances.

The target functional scores an r-dimensional subspace by how much energy
of the fine-tuning task's activations it captures, minus a beta-weighted
penalty for energy of the preserved task. Its maximizer is spanned by the
top eigenvectors of the weighted covariance difference, so selection
reduces to one symmetric eigendecomposition; the functional itself is
evaluated in closed trace form rather than by sampling.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .covariance import TaskCovariance
from .linalg import eig_sym, symmetrize
from .validation import as_matrix, check_beta, check_orthonormal, check_rank, check_square

__all__ = [
    "DegenerateSubspaceWarning",
    "RewardValue",
    "SubspaceSelector",
    "delta_cov",
    "project",
    "reward",
    "reward_oracle_max",
    "select_subspace",
]

# Relative eigenvalue-gap threshold below which the selected subspace is
# reported as non-unique.
DEGENERACY_GAP_TOL = 1e-8


class DegenerateSubspaceWarning(UserWarning):
    """The r-th eigenvalue gap is (near) zero: the optimal subspace is not unique."""


class RewardValue(NamedTuple):
    """Subspace score together with the balance weight and rank it used."""

    value: float
    beta: float
    rank: int


def _cov_matrix(cov, name: str) -> np.ndarray:
    if isinstance(cov, TaskCovariance):
        return cov.matrix
    m = as_matrix(cov, name)
    check_square(m, name)
    return m


def delta_cov(cov_pos, cov_neg, beta: float) -> np.ndarray:
    """Weighted covariance difference (1-beta)*pos - beta*neg, re-symmetrized."""
    beta = check_beta(beta)
    pos = _cov_matrix(cov_pos, "cov_pos")
    neg = _cov_matrix(cov_neg, "cov_neg")
    if pos.shape != neg.shape:
        raise ValueError(f"covariance shape mismatch: {pos.shape} vs {neg.shape}")
    return symmetrize((1.0 - beta) * pos - beta * neg)


def select_subspace(delta: np.ndarray, rank: int) -> np.ndarray:
    """Orthonormal basis (dim x rank) of the reward-maximizing subspace.

    Columns are the leading eigenvectors of *delta* in eigenvalue order,
    inheriting the eigensolver's determinism conventions. When the gap
    between the rank-th and next eigenvalue is below
    ``DEGENERACY_GAP_TOL * max(1, |lambda_1|)`` a
    :class:`DegenerateSubspaceWarning` is emitted: any basis of the tied
    eigenspace is equally optimal, so only the projection matrix is
    well-defined.
    """
    delta = as_matrix(delta, "delta")
    check_square(delta, "delta")
    rank = check_rank(rank, delta.shape[0])
    decomp = eig_sym(delta)
    values = decomp.eigenvalues
    if rank < values.shape[0]:
        gap = values[rank - 1] - values[rank]
        if gap < DEGENERACY_GAP_TOL * max(1.0, abs(values[0])):
            warnings.warn(
                f"eigenvalue gap at rank {rank} is {gap:.3e}; "
                "selected subspace is not unique",
                DegenerateSubspaceWarning,
                stacklevel=2,
            )
    return decomp.eigenvectors[:, :rank].copy()


def project(basis: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Orthogonal projection of *x* onto the span of the basis columns.

    Accepts a single vector of length dim or a ``dim x k`` block of columns.
    """
    basis = as_matrix(basis, "basis")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != basis.shape[0]:
        raise ValueError(
            f"length mismatch: basis has dim {basis.shape[0]}, input has leading "
            f"dimension {x.shape[0]}"
        )
    return basis @ (basis.T @ x)


def reward(basis, cov_pos, cov_neg, beta: float) -> RewardValue:
    """Evaluate the subspace score in trace form.

    Equals ``trace(Q Q^T delta_cov)``, i.e. the sum of quadratic forms of
    the basis columns; with empirical covariances this is identical to the
    sample average of projected squared norms.
    """
    basis = as_matrix(basis, "basis")
    delta = delta_cov(cov_pos, cov_neg, beta)
    if basis.shape[0] != delta.shape[0]:
        raise ValueError(
            f"dimension mismatch: basis has dim {basis.shape[0]}, covariances have "
            f"dim {delta.shape[0]}"
        )
    value = float(np.sum(basis * (delta @ basis)))
    return RewardValue(value=value, beta=float(beta), rank=basis.shape[1])


def reward_oracle_max(delta: np.ndarray, rank: int, trials: int, seed: int) -> RewardValue:
    """Best score among random orthonormal bases; a lower-bound probe.

    Draws ``trials`` Gaussian dim x rank matrices from one seeded stream,
    orthonormalizes each by QR, and scores them against *delta*. The
    selected subspace must meet or beat this value.
    """
    delta = as_matrix(delta, "delta")
    check_square(delta, "delta")
    rank = check_rank(rank, delta.shape[0])
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((trials, delta.shape[0], rank))
    bases = np.linalg.qr(gauss).Q
    scores = np.einsum("tji,jk,tki->t", bases, delta, bases)
    return RewardValue(value=float(scores.max()), beta=float("nan"), rank=rank)


class SubspaceSelector(TransformerMixin, BaseEstimator):
    """Estimator facade over covariance differencing and subspace selection.

    Parameters
    ----------
    rank : dimension of the selected subspace.
    beta : balance weight in [0, 1]; 0 ignores the preserved task, 1
        ignores the fine-tuning task.

    ``fit`` takes the two task covariances (``TaskCovariance`` or plain
    symmetric matrices) instead of an (X, y) pair; everything downstream
    of fitting follows the usual sklearn conventions.
    """

    def __init__(self, rank: int = 1, beta: float = 0.5):
        self.rank = rank
        self.beta = beta

    def fit(self, cov_pos, cov_neg):
        delta = delta_cov(cov_pos, cov_neg, self.beta)
        self.n_features_in_ = delta.shape[0]
        decomp = eig_sym(delta)
        rank = check_rank(self.rank, delta.shape[0])
        self.eigenvalues_ = decomp.eigenvalues
        self.basis_ = decomp.eigenvectors[:, :rank].copy()
        self.reward_ = float(decomp.eigenvalues[:rank].sum())
        self.degenerate_ = False
        if rank < self.n_features_in_:
            gap = decomp.eigenvalues[rank - 1] - decomp.eigenvalues[rank]
            if gap < DEGENERACY_GAP_TOL * max(1.0, abs(decomp.eigenvalues[0])):
                self.degenerate_ = True
                warnings.warn(
                    f"eigenvalue gap at rank {rank} is {gap:.3e}; "
                    "selected subspace is not unique",
                    DegenerateSubspaceWarning,
                    stacklevel=2,
                )
        return self

    @property
    def components_(self) -> np.ndarray:
        """Selected directions as rows, sklearn-style."""
        self._check_fitted()
        return self.basis_.T

    def transform(self, X) -> np.ndarray:
        """Project row vectors (n_samples, dim) onto the selected subspace."""
        self._check_fitted()
        X = as_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, selector was fitted with {self.n_features_in_}"
            )
        return (X @ self.basis_) @ self.basis_.T

    def project(self, x) -> np.ndarray:
        """Column-convention counterpart of :meth:`transform`."""
        self._check_fitted()
        return project(self.basis_, x)

    def _check_fitted(self):
        if not hasattr(self, "basis_"):
            raise NotFittedError("SubspaceSelector instance is not fitted yet")


def orthonormal_basis(q: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Validate an externally supplied basis (orthonormal columns)."""
    return check_orthonormal(q, tol=tol)
