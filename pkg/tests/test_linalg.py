import numpy as np
import pytest

from sclora.linalg import (
    EigenDecomposition,
    JacobiConvergenceError,
    eig_sym,
    frobenius_norm,
    mat_mul,
    svd_thin,
    symmetrize,
)


def naive_matmul(a, b):
    """Independent triple-loop product used as the multiplication oracle."""
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def random_symmetric(rng, n, scale=1.0):
    m = rng.standard_normal((n, n)) * scale
    return (m + m.T) / 2.0


class TestMatMul:
    def test_identity(self):
        rng = np.random.default_rng(0)
        m = rng.standard_normal((3, 5))
        assert np.array_equal(mat_mul(np.eye(3), m), m)

    def test_hand_example(self):
        got = mat_mul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
        assert np.array_equal(got, [[3.0], [7.0]])

    def test_against_naive_product(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        assert np.max(np.abs(mat_mul(a, b) - naive_matmul(a, b))) <= 1e-12

    def test_dimension_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
            mat_mul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            mat_mul([[np.nan, 1.0]], [[1.0], [1.0]])


class TestSymmetrize:
    def test_hand_example(self):
        assert np.array_equal(symmetrize([[1.0, 3.0], [1.0, 1.0]]), [[1.0, 2.0], [2.0, 1.0]])

    def test_symmetric_fixed_point(self):
        rng = np.random.default_rng(2)
        m = random_symmetric(rng, 6)
        assert np.array_equal(symmetrize(m), m)

    def test_skew_part_is_zero(self):
        rng = np.random.default_rng(3)
        s = symmetrize(rng.standard_normal((7, 7)))
        assert np.array_equal(s - s.T, np.zeros((7, 7)))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError, match="square"):
            symmetrize(np.ones((2, 3)))


class TestEigSym:
    def test_diagonal_matrix(self):
        d = eig_sym(np.diag([3.0, 1.0, -2.0]))
        assert np.array_equal(d.eigenvalues, [3.0, 1.0, -2.0])
        assert np.array_equal(d.eigenvectors, np.eye(3))

    def test_identity_degenerate_spectrum(self):
        d = eig_sym(np.eye(5))
        assert np.allclose(d.eigenvalues, 1.0, atol=1e-12)
        # Degenerate spectrum: only orthonormality and reconstruction are defined.
        assert np.max(np.abs(d.eigenvectors.T @ d.eigenvectors - np.eye(5))) <= 1e-10
        recon = d.eigenvectors @ np.diag(d.eigenvalues) @ d.eigenvectors.T
        assert np.linalg.norm(recon - np.eye(5)) <= 1e-9 * np.sqrt(5)

    def test_reconstruction_on_random_matrices(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            m = random_symmetric(rng, 8)
            d = eig_sym(m)
            recon = d.eigenvectors @ np.diag(d.eigenvalues) @ d.eigenvectors.T
            assert np.linalg.norm(recon - m) <= 1e-9 * np.linalg.norm(m)

    def test_invariants_on_random_matrices(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(2, 10))
            m = random_symmetric(rng, n, scale=float(rng.uniform(0.1, 100.0)))
            d = eig_sym(m)
            assert np.all(np.diff(d.eigenvalues) <= 0.0)
            gram = d.eigenvectors.T @ d.eigenvectors
            assert np.max(np.abs(gram - np.eye(n))) <= 1e-10
            residual = m @ d.eigenvectors - d.eigenvectors * d.eigenvalues
            assert np.linalg.norm(residual) <= 1e-9 * max(1.0, np.linalg.norm(m))

    def test_eigenvalue_sum_matches_trace(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            m = random_symmetric(rng, 9, scale=3.0)
            vals = eig_sym(m).eigenvalues
            trace = float(np.trace(m))
            assert abs(vals.sum() - trace) <= 1e-9 * max(1.0, abs(trace))

    def test_psd_input_yields_nonnegative_eigenvalues(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((6, 4))
        vals = eig_sym(symmetrize(x @ x.T)).eigenvalues
        assert np.all(vals >= -1e-10)

    def test_sign_convention(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            d = eig_sym(random_symmetric(rng, 7))
            for i in range(7):
                col = d.eigenvectors[:, i]
                assert col[np.argmax(np.abs(col))] > 0.0

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(9)
        m = random_symmetric(rng, 10)
        d1 = eig_sym(m)
        d2 = eig_sym(m.copy())
        assert d1.eigenvalues.tobytes() == d2.eigenvalues.tobytes()
        assert d1.eigenvectors.tobytes() == d2.eigenvectors.tobytes()

    def test_convergence_error_carries_residual(self):
        rng = np.random.default_rng(10)
        m = random_symmetric(rng, 6)
        with pytest.raises(JacobiConvergenceError) as err:
            eig_sym(m, max_sweeps=0)
        assert err.value.offdiag_norm > 0.0
        assert "off-diagonal" in str(err.value)

    def test_accepts_tiny_asymmetry(self):
        # Float noise below the symmetrize guarantee must not change results.
        rng = np.random.default_rng(11)
        m = random_symmetric(rng, 5)
        noisy = m.copy()
        noisy[0, 1] += 1e-16
        d = eig_sym(noisy)
        assert np.allclose(d.eigenvalues, eig_sym(m).eigenvalues, atol=1e-12)

    def test_result_type(self):
        d = eig_sym(np.eye(2))
        assert isinstance(d, EigenDecomposition)
        assert d.dim == 2


class TestSvdThin:
    def test_diagonal_matrix(self):
        u, s, v = svd_thin(np.diag([5.0, 2.0, 1.0]), 2)
        assert np.allclose(s, [5.0, 2.0])
        assert np.allclose(np.abs(u), np.eye(3)[:, :2], atol=1e-12)
        # Sign convention: the dominant component of each column is positive.
        assert u[0, 0] > 0 and u[1, 1] > 0

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(12)
        m = rng.standard_normal((5, 8))
        u, s, v = svd_thin(m, 5)
        assert np.linalg.norm(u @ np.diag(s) @ v.T - m) <= 1e-9 * np.linalg.norm(m)

    def test_eckart_young_against_gram_eigendecomposition(self):
        # Oracle: a full decomposition obtained through eig_sym of m^T m.
        rng = np.random.default_rng(13)
        m = rng.standard_normal((6, 4))
        u, s, v = svd_thin(m, 2)
        err_sq = np.linalg.norm(u @ np.diag(s) @ v.T - m) ** 2
        gram_vals = eig_sym(symmetrize(m.T @ m)).eigenvalues
        assert abs(err_sq - (gram_vals[2] + gram_vals[3])) <= 1e-8

    def test_singular_values_match_gram_eigenvalues(self):
        rng = np.random.default_rng(14)
        m = rng.standard_normal((7, 5))
        _, s, _ = svd_thin(m, 3)
        gram_vals = eig_sym(symmetrize(m.T @ m)).eigenvalues
        assert np.max(np.abs(s - np.sqrt(gram_vals[:3]))) <= 1e-8

    def test_orthonormal_factors(self):
        rng = np.random.default_rng(15)
        m = rng.standard_normal((6, 9))
        u, s, v = svd_thin(m, 4)
        assert np.max(np.abs(u.T @ u - np.eye(4))) <= 1e-10
        assert np.max(np.abs(v.T @ v - np.eye(4))) <= 1e-10
        assert np.all(np.diff(s) <= 0.0) and np.all(s >= 0.0)

    def test_rank_out_of_range(self):
        m = np.ones((3, 4))
        with pytest.raises(ValueError, match="rank"):
            svd_thin(m, 0)
        with pytest.raises(ValueError, match="rank"):
            svd_thin(m, 4)

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(16)
        m = rng.standard_normal((6, 5))
        first = svd_thin(m, 3)
        second = svd_thin(m.copy(), 3)
        for x, y in zip(first, second):
            assert x.tobytes() == y.tobytes()


class TestFrobeniusNorm:
    def test_zero_matrix(self):
        assert frobenius_norm(np.zeros((3, 4))) == 0.0

    def test_three_four_five(self):
        assert frobenius_norm([[3.0, 4.0]]) == 5.0

    def test_orthogonal_invariance(self):
        rng = np.random.default_rng(17)
        m = rng.standard_normal((6, 4))
        q = eig_sym(random_symmetric(rng, 6)).eigenvectors
        assert abs(frobenius_norm(q.T @ m) - frobenius_norm(m)) <= 1e-12
