import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probdg.exceptions import ClassIndexOutOfRange, ShapeMismatch
from probdg.stats import (
    ClassStats,
    GaussianPrototypes,
    LocalClassSummary,
    StatsBank,
    bank_batch_oracle,
    bank_update,
    local_summary,
    merge_cov,
    merge_mean,
)
from probdg.tensor_io import make_rng


def _summary(values):
    v = np.asarray(values, dtype=float)[:, None]
    return LocalClassSummary(len(v), v.mean(axis=0), np.cov(v.T, bias=True).reshape(1, 1))


def test_local_summary_two_pixels():
    feats = np.array([[[1.0, 3.0, 9.0]]])
    labels = np.array([[1, 1, 0]])
    s = local_summary(feats, labels, 1)
    assert s.count == 2
    np.testing.assert_allclose(s.mean, [2.0])
    np.testing.assert_allclose(s.cov, [[1.0]])


def test_local_summary_single_pixel_and_absent():
    feats = np.array([[[5.0]]])
    s = local_summary(feats, np.array([[0]]), 0)
    assert s.count == 1 and s.mean[0] == 5.0 and s.cov[0, 0] == 0.0
    assert local_summary(feats, np.array([[0]]), 1) is None


def test_local_summary_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        local_summary(np.zeros((2, 3, 3)), np.zeros((3, 2), dtype=int), 0)


def test_merge_mean_examples():
    prev = ClassStats(3, np.array([2.0]), np.zeros((1, 1)))
    local = LocalClassSummary(1, np.array([6.0]), np.zeros((1, 1)))
    # oracle: mean of the concatenated multiset {1, 2, 3} + {6}
    assert merge_mean(prev, local)[0] == pytest.approx(np.mean([1, 2, 3, 6]))
    empty = ClassStats.zeros(1)
    assert merge_mean(empty, local)[0] == 6.0
    same = ClassStats(7, np.array([6.0]), np.zeros((1, 1)))
    assert merge_mean(same, local)[0] == 6.0


def test_merge_cov_pooled_variance():
    prev_s = _summary([0.0, 2.0])
    prev = ClassStats(prev_s.count, prev_s.mean, prev_s.cov)
    local = _summary([4.0])
    got = merge_cov(prev, local)[0, 0]
    assert got == pytest.approx(np.var([0.0, 2.0, 4.0]), abs=1e-15)
    assert got == pytest.approx(8.0 / 3.0, abs=1e-15)


def test_merge_cov_degenerate_and_empty_prior(rng):
    prev = ClassStats(4, np.array([1.0, 2.0]), np.zeros((2, 2)))
    local = LocalClassSummary(3, np.array([1.0, 2.0]), np.zeros((2, 2)))
    assert np.array_equal(merge_cov(prev, local), np.zeros((2, 2)))
    a = rng.standard_normal((2, 2))
    local = LocalClassSummary(3, np.array([1.0, 2.0]), a @ a.T)
    np.testing.assert_allclose(merge_cov(ClassStats.zeros(2), local), a @ a.T, atol=1e-15)


def test_merge_dim_mismatch():
    with pytest.raises(ShapeMismatch):
        merge_cov(ClassStats.zeros(2), LocalClassSummary(1, np.zeros(3), np.zeros((3, 3))))


def test_bank_update_from_empty_equals_local_summary(rng):
    feats = rng.standard_normal((3, 6, 5))
    labels = rng.integers(0, 2, (6, 5))
    bank = bank_update(StatsBank(2, 3), feats, labels)
    for k in range(2):
        s = local_summary(feats, labels, k)
        np.testing.assert_allclose(bank.means[k], s.mean, atol=1e-14)
        np.testing.assert_allclose(bank.covs[k], s.cov, atol=1e-14)
        assert bank.counts[k] == s.count


def test_bank_update_leaves_input_untouched(rng):
    bank = StatsBank(2, 3)
    bank_update(bank, rng.standard_normal((3, 4, 4)), np.zeros((4, 4), dtype=int))
    assert bank.counts.sum() == 0


def test_absent_classes_stay_zero(rng):
    bank = StatsBank(4, 2).update(rng.standard_normal((2, 5, 5)), np.zeros((5, 5), dtype=int))
    assert np.all(bank.means[1:] == 0) and np.all(bank.covs[1:] == 0)
    assert list(bank.counts) == [25, 0, 0, 0]


def test_bank_rejects_bad_input(rng):
    bank = StatsBank(2, 3)
    with pytest.raises(ShapeMismatch):
        bank.update(rng.standard_normal((4, 3, 3)), np.zeros((3, 3), dtype=int))
    with pytest.raises(ClassIndexOutOfRange):
        bank.update(rng.standard_normal((3, 3, 3)), np.full((3, 3), 2))


def test_two_updates_equal_one_concatenated(rng):
    a = rng.standard_normal((3, 4, 6))
    b = rng.standard_normal((3, 4, 6)) + 2.0
    ya, yb = rng.integers(0, 3, (4, 6)), rng.integers(0, 3, (4, 6))
    seq = StatsBank(3, 3).update(a, ya).update(b, yb)
    cat = StatsBank(3, 3).update(np.concatenate([a, b], axis=2), np.concatenate([ya, yb], axis=1))
    np.testing.assert_allclose(seq.means, cat.means, atol=1e-10)
    np.testing.assert_allclose(seq.covs, cat.covs, atol=1e-10)


def test_batch_oracle_edge_cases(rng):
    assert bank_batch_oracle([], 3, 2).counts.sum() == 0
    feats, labels = rng.standard_normal((2, 5, 5)), rng.integers(0, 3, (5, 5))
    one = bank_batch_oracle([(feats, labels)], 3, 2)
    streamed = StatsBank(3, 2).update(feats, labels)
    np.testing.assert_allclose(one.means, streamed.means, atol=1e-14)
    np.testing.assert_allclose(one.covs, streamed.covs, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_streaming_matches_batch_and_is_order_free(seed):
    rng = make_rng(seed)
    c, k = int(rng.choice([2, 4])), int(rng.choice([2, 3, 5]))
    images = [(rng.standard_normal((c, 8, 8)) * 2 + 1, rng.integers(0, k, (8, 8)))
              for _ in range(int(rng.integers(1, 9)))]
    streamed = StatsBank(k, c)
    for f, y in images:
        streamed.update(f, y)
    batch = bank_batch_oracle(images, k, c)
    np.testing.assert_allclose(streamed.means, batch.means, atol=1e-9)
    np.testing.assert_allclose(streamed.covs, batch.covs, atol=1e-9)
    shuffled = StatsBank(k, c)
    for i in rng.permutation(len(images)):
        shuffled.update(*images[i])
    np.testing.assert_allclose(streamed.covs, shuffled.covs, atol=1e-9)
    assert all(np.array_equal(s, s.T) for s in streamed.covs)
    assert streamed.check_psd()
    total = np.bincount(np.concatenate([y.ravel() for _, y in images]), minlength=k)
    assert np.array_equal(total, streamed.counts)


def test_estimator_wrapper(rng):
    feats = [rng.standard_normal((3, 4, 4)) for _ in range(3)]
    labels = [rng.integers(0, 2, (4, 4)) for _ in range(3)]
    est = GaussianPrototypes(num_classes=2).fit(feats, labels)
    ref = bank_batch_oracle(list(zip(feats, labels)), 2, 3)
    np.testing.assert_allclose(est.means_, ref.means, atol=1e-12)
    np.testing.assert_allclose(est.covariances_, ref.covs, atol=1e-12)
    assert est.get_params() == {"num_classes": 2}
    est.fit(feats[:1], labels[:1])
    assert est.counts_.sum() == 16
