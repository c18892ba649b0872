"""Low-rank adapter pairs and their initialization schemes.

A layer is factored as ``W = w_res + b @ a`` with ``w_res`` frozen. Three
initializers are provided: the subspace-constrained scheme (b spans a
chosen output subspace, a carries the original layer restricted to it),
the standard Gaussian/zero scheme, and the principal-singular-triplet
scheme. All three reproduce the original weight exactly at initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .linalg import svd_thin
from .validation import as_matrix, check_orthonormal, check_rank

__all__ = [
    "AdapterPair",
    "PISSA",
    "SC_LORA",
    "SCHEMES",
    "VANILLA",
    "init_pissa",
    "init_sc_lora",
    "init_vanilla",
]

SC_LORA = "sc-lora"
VANILLA = "vanilla"
PISSA = "pissa"
SCHEMES = (SC_LORA, VANILLA, PISSA)


@dataclass(frozen=True)
class AdapterPair:
    """Down-projection ``a`` (rank x d_in), up-projection ``b`` (d_out x rank),
    frozen residual ``w_res`` (d_out x d_in)."""

    a: np.ndarray
    b: np.ndarray
    w_res: np.ndarray
    rank: int
    scheme: str

    def __post_init__(self):
        if self.b.shape[1] != self.rank or self.a.shape[0] != self.rank:
            raise ValueError(
                f"shape incoherence: b is {self.b.shape}, a is {self.a.shape}, "
                f"rank is {self.rank}"
            )
        if self.w_res.shape != (self.b.shape[0], self.a.shape[1]):
            raise ValueError(
                f"w_res shape {self.w_res.shape} does not match b@a shape "
                f"({self.b.shape[0]}, {self.a.shape[1]})"
            )

    @property
    def d_in(self) -> int:
        return self.a.shape[1]

    @property
    def d_out(self) -> int:
        return self.b.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Apply the adapted layer to *x* in factored form (b@a never materialized).

        Accepts a vector of length d_in or a d_in x k block of columns.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.d_in:
            raise ValueError(
                f"length mismatch: layer expects input dim {self.d_in}, "
                f"got leading dimension {x.shape[0]}"
            )
        return self.w_res @ x + self.b @ (self.a @ x)

    def merged(self) -> np.ndarray:
        """Collapse the factorization into a single weight matrix."""
        return self.w_res + self.b @ self.a

    def with_weights(self, a: np.ndarray | None = None, b: np.ndarray | None = None) -> "AdapterPair":
        """Copy with updated trainable factors; the residual stays shared."""
        return replace(
            self,
            a=self.a if a is None else np.asarray(a, dtype=np.float64),
            b=self.b if b is None else np.asarray(b, dtype=np.float64),
        )


def init_sc_lora(w0, basis) -> AdapterPair:
    """Subspace-constrained initialization from an orthonormal output basis.

    ``b`` is the basis itself and ``a`` is the basis-transposed original
    weight, so the adapter's output at init is exactly the projection of
    the original layer's output onto the basis span.
    """
    w0 = as_matrix(w0, "w0")
    basis = check_orthonormal(basis, name="basis")
    if basis.shape[0] != w0.shape[0]:
        raise ValueError(
            f"dimension mismatch: basis has dim {basis.shape[0]}, w0 has "
            f"{w0.shape[0]} rows"
        )
    b = basis.copy()
    a = basis.T @ w0
    w_res = w0 - b @ a
    return AdapterPair(a=a, b=b, w_res=w_res, rank=basis.shape[1], scheme=SC_LORA)


def init_vanilla(w0, rank: int, seed: int = 0) -> AdapterPair:
    """Gaussian ``a`` (fan-in variance 2/d_in), zero ``b``; residual is w0 itself."""
    w0 = as_matrix(w0, "w0")
    rank = check_rank(rank, min(w0.shape))
    d_out, d_in = w0.shape
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((rank, d_in)) * np.sqrt(2.0 / d_in)
    b = np.zeros((d_out, rank))
    return AdapterPair(a=a, b=b, w_res=w0.copy(), rank=rank, scheme=VANILLA)


def init_pissa(w0, rank: int) -> AdapterPair:
    """Principal singular triplets of w0, split as b = U sqrt(S), a = sqrt(S) V^T."""
    w0 = as_matrix(w0, "w0")
    rank = check_rank(rank, min(w0.shape))
    u, s, v = svd_thin(w0, rank)
    root = np.sqrt(s)
    b = u * root
    a = root[:, None] * v.T
    w_res = w0 - b @ a
    return AdapterPair(a=a, b=b, w_res=w_res, rank=rank, scheme=PISSA)
