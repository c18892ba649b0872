import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from sclora.covariance import (
    ActivationCovariance,
    clip_tokens,
    rank_deficiency_check,
)
from sclora.linalg import eig_sym


def batch_covariance(samples):
    """Oracle: materialize the token-summed batch and take one dense product."""
    xhat = np.stack([s.sum(axis=1) for s in samples], axis=1)
    return (xhat @ xhat.T) / len(samples)


def make_samples(rng, count, dim, length):
    return [rng.standard_normal((dim, length)) for _ in range(count)]


class TestAccumulate:
    def test_hand_example(self):
        acc = ActivationCovariance()
        acc.partial_fit(np.array([[1.0, 1.0], [0.0, 0.0]]))
        assert np.array_equal(acc.sum_outer_, [[4.0, 0.0], [0.0, 0.0]])
        assert acc.n_samples_ == 1
        assert np.array_equal(acc.finalize().matrix, [[4.0, 0.0], [0.0, 0.0]])

    def test_zero_sample_only_bumps_count(self):
        acc = ActivationCovariance()
        acc.partial_fit(np.ones((3, 2)))
        before = acc.sum_outer_.copy()
        acc.partial_fit(np.zeros((3, 2)))
        assert np.array_equal(acc.sum_outer_, before)
        assert acc.n_samples_ == 2

    def test_streaming_equals_batch_oracle(self):
        rng = np.random.default_rng(0)
        samples = make_samples(rng, 50, dim=6, length=3)
        acc = ActivationCovariance().fit(samples)
        assert np.max(np.abs(acc.finalize().matrix - batch_covariance(samples))) <= 1e-12

    def test_dimension_mismatch_rejected(self):
        acc = ActivationCovariance().partial_fit(np.ones((3, 2)))
        with pytest.raises(ValueError, match="dim 3"):
            acc.partial_fit(np.ones((4, 2)), sample_id="s1")

    def test_token_length_mismatch_rejected(self):
        acc = ActivationCovariance().partial_fit(np.ones((3, 2)))
        with pytest.raises(ValueError, match="L=2"):
            acc.partial_fit(np.ones((3, 5)))

    def test_fit_resets_state(self):
        rng = np.random.default_rng(1)
        acc = ActivationCovariance().fit(make_samples(rng, 4, 3, 2))
        acc.fit(make_samples(rng, 2, 3, 2))
        assert acc.n_samples_ == 2


class TestMerge:
    def test_empty_is_identity(self):
        rng = np.random.default_rng(2)
        acc = ActivationCovariance().fit(make_samples(rng, 5, 4, 2))
        merged = ActivationCovariance().merge(acc)
        assert np.array_equal(merged.sum_outer_, acc.sum_outer_)
        assert merged.n_samples_ == acc.n_samples_
        assert merged.token_length_ == acc.token_length_

    def test_merge_of_singletons_equals_sequential(self):
        rng = np.random.default_rng(3)
        s1, s2 = make_samples(rng, 2, 5, 2)
        a = ActivationCovariance().partial_fit(s1)
        b = ActivationCovariance().partial_fit(s2)
        both = ActivationCovariance().fit([s1, s2])
        assert np.max(np.abs(a.merge(b).finalize().matrix - both.finalize().matrix)) <= 1e-14

    def test_commutative(self):
        rng = np.random.default_rng(4)
        a = ActivationCovariance().fit(make_samples(rng, 7, 4, 3))
        b = ActivationCovariance().fit(make_samples(rng, 5, 4, 3))
        ab = a.merge(b).finalize().matrix
        ba = b.merge(a).finalize().matrix
        assert np.max(np.abs(ab - ba)) <= 1e-12

    def test_associative(self):
        rng = np.random.default_rng(5)
        a, b, c = (ActivationCovariance().fit(make_samples(rng, 4, 3, 2)) for _ in range(3))
        left = a.merge(b).merge(c).finalize().matrix
        right = a.merge(b.merge(c)).finalize().matrix
        assert np.max(np.abs(left - right)) <= 1e-12

    def test_sharded_equals_sequential(self):
        rng = np.random.default_rng(6)
        samples = make_samples(rng, 20, 5, 2)
        shards = [samples[0:3], samples[3:9], samples[9:14], samples[14:20]]
        merged = ActivationCovariance()
        for shard in shards:
            merged = merged.merge(ActivationCovariance().fit(shard))
        sequential = ActivationCovariance().fit(samples)
        assert np.max(np.abs(merged.finalize().matrix - sequential.finalize().matrix)) <= 1e-12
        assert merged.n_samples_ == 20

    def test_mismatch_rejected(self):
        a = ActivationCovariance().partial_fit(np.ones((3, 2)))
        b = ActivationCovariance().partial_fit(np.ones((4, 2)))
        with pytest.raises(ValueError, match="merge dim mismatch"):
            a.merge(b)
        c = ActivationCovariance().partial_fit(np.ones((3, 5)))
        with pytest.raises(ValueError, match="token length"):
            a.merge(c)


class TestFinalize:
    def test_single_sample(self):
        acc = ActivationCovariance().partial_fit(np.array([[2.0], [0.0]]))
        assert np.array_equal(acc.finalize().matrix, [[4.0, 0.0], [0.0, 0.0]])

    def test_repeated_sample_cancels_scale(self):
        rng = np.random.default_rng(7)
        sample = rng.standard_normal((4, 3))
        one = ActivationCovariance().partial_fit(sample).finalize().matrix
        four = ActivationCovariance().fit([sample] * 4).finalize().matrix
        assert np.array_equal(one, four)
        three = ActivationCovariance().fit([sample] * 3).finalize().matrix
        assert np.max(np.abs(one - three)) <= 1e-15 * np.max(np.abs(one))

    def test_finalized_matrix_is_psd(self):
        rng = np.random.default_rng(8)
        cov = ActivationCovariance().fit(make_samples(rng, 10, 6, 2)).finalize()
        assert np.all(eig_sym(cov.matrix).eigenvalues >= -1e-10)
        assert np.array_equal(cov.matrix, cov.matrix.T)

    def test_zero_samples_rejected(self):
        with pytest.raises(NotFittedError):
            ActivationCovariance().finalize()

    def test_rank_bounded_by_sample_count(self):
        # Token summation makes one vector per sample, so rank <= B.
        rng = np.random.default_rng(9)
        cov = ActivationCovariance().fit(make_samples(rng, 3, 8, 2)).finalize()
        vals = eig_sym(cov.matrix).eigenvalues
        assert np.sum(vals > 1e-8 * vals[0]) <= 3


class TestRankDeficiencyCheck:
    def _cov(self, dim, n_samples, token_length):
        from sclora.covariance import TaskCovariance

        return TaskCovariance(np.zeros((dim, dim)), n_samples, token_length)

    def test_sparse_samples_warn(self):
        verdict = rank_deficiency_check(self._cov(64, 1, 4), rank=8)
        assert not verdict.ok
        assert verdict.sample_budget == 4 and verdict.required == 56

    def test_ample_samples_ok(self):
        verdict = rank_deficiency_check(self._cov(64, 32, 4), rank=8)
        assert verdict.ok
        assert verdict.sample_budget == 128

    def test_boundary_is_ok(self):
        # The deficiency condition is strict: B*L == dim - rank passes.
        verdict = rank_deficiency_check(self._cov(64, 14, 4), rank=8)
        assert verdict.ok and verdict.sample_budget == 56 == verdict.required

    def test_unknown_provenance_rejected(self):
        with pytest.raises(ValueError, match="provenance"):
            rank_deficiency_check(self._cov(8, None, None), rank=2)

    def test_message_mentions_bound(self):
        verdict = rank_deficiency_check(self._cov(64, 1, 4), rank=8)
        assert "4" in verdict.message and "56" in verdict.message


def test_clip_tokens():
    tokens = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(clip_tokens(tokens, 2), tokens[:, :2])
    assert clip_tokens(tokens, 9).shape == (3, 4)
    with pytest.raises(ValueError):
        clip_tokens(tokens, 0)
