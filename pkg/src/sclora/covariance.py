"""Streaming second-moment estimation of layer output activations.

Each sample is a ``dim x L`` block of per-token output vectors. The token
columns are summed into a single vector per sample before the outer product
is accumulated, and the finalized matrix divides by the number of samples
(not by samples*tokens). Accumulators shard and merge cleanly, so parallel
ingestion reproduces single-threaded results to float addition order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .linalg import symmetrize
from .validation import as_matrix, check_rank

__all__ = [
    "ActivationCovariance",
    "RankDeficiencyVerdict",
    "TaskCovariance",
    "clip_tokens",
    "rank_deficiency_check",
]


@dataclass(frozen=True)
class TaskCovariance:
    """Finalized uncentered covariance for one task's activations.

    The sample provenance fields are ``None`` for covariances loaded from
    bare matrix files, where the estimation history is unknown.
    """

    matrix: np.ndarray
    n_samples: int | None
    token_length: int | None

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def clip_tokens(tokens: np.ndarray, max_len: int) -> np.ndarray:
    """Drop token columns beyond *max_len*; shorter samples pass through."""
    if max_len < 1:
        raise ValueError(f"clip length must be >= 1, got {max_len}")
    return tokens[:, :max_len]


class ActivationCovariance(BaseEstimator):
    """Mergeable running sum of per-sample outer products.

    ``partial_fit`` ingests one activation sample at a time, which keeps
    memory flat regardless of corpus size; ``fit`` resets and consumes an
    iterable of samples. The ambient dimension and token length are locked
    by the first sample seen.
    """

    def __init__(self):
        self._reset()

    def _reset(self):
        self.dim_ = None
        self.token_length_ = None
        self.sum_outer_ = None
        self.n_samples_ = 0

    @property
    def is_empty(self) -> bool:
        return self.dim_ is None

    def fit(self, samples, y=None):
        self._reset()
        for s in samples:
            self.partial_fit(s)
        return self

    def partial_fit(self, tokens, sample_id=None):
        """Accumulate one ``dim x L`` sample (columns are token positions)."""
        tokens = as_matrix(tokens, "activation sample")
        label = f"sample {sample_id}" if sample_id is not None else "sample"
        if self.is_empty:
            self.dim_ = tokens.shape[0]
            self.token_length_ = tokens.shape[1]
            self.sum_outer_ = np.zeros((self.dim_, self.dim_))
        if tokens.shape[0] != self.dim_:
            raise ValueError(
                f"{label}: dimension mismatch, accumulator has dim {self.dim_} "
                f"but sample has {tokens.shape[0]} rows"
            )
        if tokens.shape[1] != self.token_length_:
            raise ValueError(
                f"{label}: token length mismatch, accumulator has L={self.token_length_} "
                f"but sample has L={tokens.shape[1]} (use clipping to equalize lengths)"
            )
        summed = tokens.sum(axis=1)
        self.sum_outer_ += np.outer(summed, summed)
        self.n_samples_ += 1
        return self

    def merge(self, other: "ActivationCovariance") -> "ActivationCovariance":
        """Combine two accumulators; either side may be empty."""
        if not isinstance(other, ActivationCovariance):
            raise TypeError(f"cannot merge with {type(other).__name__}")
        if self.is_empty and other.is_empty:
            return ActivationCovariance()
        if self.is_empty or other.is_empty:
            src = other if self.is_empty else self
            out = ActivationCovariance()
            out.dim_ = src.dim_
            out.token_length_ = src.token_length_
            out.sum_outer_ = src.sum_outer_.copy()
            out.n_samples_ = src.n_samples_
            return out
        if self.dim_ != other.dim_:
            raise ValueError(f"merge dim mismatch: {self.dim_} vs {other.dim_}")
        if self.token_length_ != other.token_length_:
            raise ValueError(
                f"merge token length mismatch: {self.token_length_} vs {other.token_length_}"
            )
        out = ActivationCovariance()
        out.dim_ = self.dim_
        out.token_length_ = self.token_length_
        out.sum_outer_ = self.sum_outer_ + other.sum_outer_
        out.n_samples_ = self.n_samples_ + other.n_samples_
        return out

    def finalize(self) -> TaskCovariance:
        """Divide by the sample count and re-symmetrize."""
        if self.n_samples_ < 1:
            raise NotFittedError("cannot finalize an accumulator with zero samples")
        matrix = symmetrize(self.sum_outer_ / self.n_samples_)
        return TaskCovariance(matrix, self.n_samples_, self.token_length_)


@dataclass(frozen=True)
class RankDeficiencyVerdict:
    """Outcome of the sparse-sample diagnostic for a task covariance."""

    ok: bool
    sample_budget: int
    required: int

    @property
    def message(self) -> str:
        rel = ">=" if self.ok else "<"
        return (
            f"covariance built from B*L = {self.sample_budget} token-summed vectors, "
            f"{rel} dim - rank = {self.required}; "
            + ("spectrum is determined." if self.ok else "null space exceeds the requested rank, "
               "subspace selection is non-unique.")
        )


def rank_deficiency_check(cov: TaskCovariance, rank: int) -> RankDeficiencyVerdict:
    """Warn when too few samples leave the selected subspace underdetermined.

    The covariance of B samples of L summed tokens has rank at most B*L; if
    B*L < dim - rank its null space is larger than the requested subspace
    and any basis inside it ties for optimality. The boundary case is OK
    (the condition is strict).
    """
    rank = check_rank(rank, cov.dim)
    if cov.n_samples is None:
        raise ValueError("covariance has no sample provenance; cannot assess rank deficiency")
    token_length = 1 if cov.token_length is None else cov.token_length
    budget = cov.n_samples * token_length
    required = cov.dim - rank
    return RankDeficiencyVerdict(ok=budget >= required, sample_budget=budget, required=required)
