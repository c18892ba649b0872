"""Dense real linear algebra used by the rest of the package.

The symmetric eigensolver is a cyclic Jacobi iteration written here rather
than delegated to LAPACK so that the ordering and sign conventions of the
returned eigenvectors are fully pinned down: downstream subspace selection
must be reproducible bit-for-bit across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import as_matrix, check_multipliable, check_rank, check_square

__all__ = [
    "EigenDecomposition",
    "JacobiConvergenceError",
    "eig_sym",
    "frobenius_norm",
    "mat_mul",
    "svd_thin",
    "symmetrize",
]


class JacobiConvergenceError(RuntimeError):
    """Raised when the Jacobi sweep budget is exhausted before convergence.

    Carries the remaining off-diagonal Frobenius norm in ``offdiag_norm``.
    """

    def __init__(self, offdiag_norm: float, sweeps: int):
        self.offdiag_norm = float(offdiag_norm)
        self.sweeps = int(sweeps)
        super().__init__(
            f"Jacobi eigensolver did not converge in {sweeps} sweeps; "
            f"off-diagonal norm is {offdiag_norm:.3e}"
        )


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues in descending order; ``eigenvectors[:, i]`` pairs with ``eigenvalues[i]``."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]


def mat_mul(a, b) -> np.ndarray:
    """Matrix product with explicit shape checking."""
    a = as_matrix(a, "left factor")
    b = as_matrix(b, "right factor")
    check_multipliable(a, b)
    return a @ b


def symmetrize(m) -> np.ndarray:
    """Return (m + m^T) / 2, the exactly symmetric part of a square matrix."""
    m = as_matrix(m)
    check_square(m)
    return (m + m.T) / 2.0


def frobenius_norm(m) -> float:
    """Square root of the sum of squared entries."""
    m = as_matrix(m)
    return float(np.sqrt(np.sum(m * m)))


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude component is positive.

    Magnitude ties resolve to the lowest index (argmax picks the first
    maximum), making the output independent of solver round-off history.
    """
    idx = np.argmax(np.abs(vectors), axis=0)
    flip = vectors[idx, np.arange(vectors.shape[1])] < 0.0
    out = vectors.copy()
    out[:, flip] *= -1.0
    return out


def eig_sym(m, *, tol: float = 1e-12, max_sweeps: int = 100) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as (m + m^T)/2 before iterating, which is a
    bitwise no-op for already-symmetric input. Converged when the
    off-diagonal Frobenius norm falls below ``tol * ||m||_F``. Eigenpairs
    are returned sorted by eigenvalue descending (stable in solver column
    order on ties) with the sign convention of :func:`_canonical_signs`.

    Raises :class:`JacobiConvergenceError` if ``max_sweeps`` full sweeps do
    not reach the threshold.
    """
    a = as_matrix(m)
    check_square(a)
    a = (a + a.T) / 2.0
    n = a.shape[0]
    q = np.eye(n)

    if n == 1:
        return EigenDecomposition(a[0].copy(), q)

    # Frobenius norm is invariant under the rotations, so compute it once.
    norm = math.sqrt(float(np.sum(a * a)))
    threshold = tol * norm
    # Entries below skip_tol can be left alone: if every off-diagonal entry
    # is under tol*norm/n, the total off-diagonal norm is under tol*norm.
    skip_tol = threshold / n

    diag_mask = ~np.eye(n, dtype=bool)
    sweeps = 0
    while True:
        # Measured directly (not as ||A||^2 - ||diag||^2, which cancels badly
        # once the off-diagonal part is tiny).
        offdiag = math.sqrt(float(np.sum(a[diag_mask] ** 2)))
        if offdiag <= threshold:
            break
        if sweeps >= max_sweeps:
            raise JacobiConvergenceError(offdiag, max_sweeps)
        sweeps += 1
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if abs(apr) <= skip_tol:
                    continue
                # Classical symmetric Schur rotation zeroing a[p, r].
                tau = (a[r, r] - a[p, p]) / (2.0 * apr)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c

                col_p = a[:, p].copy()
                col_r = a[:, r].copy()
                a[:, p] = c * col_p - s * col_r
                a[:, r] = s * col_p + c * col_r
                row_p = a[p, :].copy()
                row_r = a[r, :].copy()
                a[p, :] = c * row_p - s * row_r
                a[r, :] = s * row_p + c * row_r
                a[p, r] = 0.0
                a[r, p] = 0.0

                q_p = q[:, p].copy()
                q_r = q[:, r].copy()
                q[:, p] = c * q_p - s * q_r
                q[:, r] = s * q_p + c * q_r

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = _canonical_signs(q[:, order])
    return EigenDecomposition(values, vectors)


def svd_thin(m, rank: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Leading *rank* singular triplets of *m*.

    Returns ``(u, s, v)`` with orthonormal-column ``u`` (rows x rank) and
    ``v`` (cols x rank) and non-increasing ``s``, so ``u @ diag(s) @ v.T``
    is the best rank-``rank`` Frobenius approximation of *m*. Column signs
    follow the same convention as :func:`eig_sym` (applied to ``u``).
    """
    m = as_matrix(m)
    rank = check_rank(rank, min(m.shape))
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    u = u[:, :rank]
    s = s[:rank].copy()
    v = vt[:rank].T.copy()
    idx = np.argmax(np.abs(u), axis=0)
    flip = u[idx, np.arange(rank)] < 0.0
    u = u.copy()
    u[:, flip] *= -1.0
    v[:, flip] *= -1.0
    return u, s, v
