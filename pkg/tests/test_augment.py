import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqcl.augment import AugmentConfig, augment_batch_history, augment_history, embed_dropout_mask
from aqcl.data import Dataset, Sample


def test_zero_rate_keeps_history(rng):
    s = Sample(0, 1, (3, 4, 5), 1)
    assert augment_history(s, AugmentConfig(history_mask_rate=0.0), rng) == s


@pytest.mark.parametrize("rate", [0.5, 0.99, 1.0])
def test_single_item_history_is_retained(rng, rate):
    s = Sample(0, 1, (3,), 1)
    for _ in range(50):
        assert augment_history(s, AugmentConfig(history_mask_rate=rate), rng).history == (3,)


def test_half_rate_on_long_history(rng):
    s = Sample(0, 1, tuple(range(1000)), 1)
    kept = [len(augment_history(s, AugmentConfig(history_mask_rate=0.5), rng).history) for _ in range(200)]
    assert all(400 <= k <= 600 for k in kept)


def test_empty_history_stays_empty(rng):
    s = Sample(0, 1, (), 0)
    assert augment_history(s, AugmentConfig(history_mask_rate=0.9), rng).history == ()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 50), max_size=20), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_other_fields_untouched_and_order_kept(hist, rate, seed):
    s = Sample(4, 9, tuple(hist), 1, (2,), 5.0)
    out = augment_history(s, AugmentConfig(history_mask_rate=rate), np.random.default_rng(seed))
    assert (out.user_id, out.item_id, out.label, out.extras, out.timestamp) == (4, 9, 1, (2,), 5.0)
    it = iter(s.history)
    assert all(v in it for v in out.history)  # subsequence
    assert (len(out.history) >= 1) == (len(hist) >= 1)


def test_reproducible_with_same_seed():
    s = Sample(0, 1, tuple(range(30)), 1)
    cfg = AugmentConfig(history_mask_rate=0.3)
    a = augment_history(s, cfg, np.random.default_rng(5))
    b = augment_history(s, cfg, np.random.default_rng(5))
    assert a == b


def test_embed_mask_examples():
    rng = np.random.default_rng(0)
    assert np.all(embed_dropout_mask((4, 5), AugmentConfig(embed_drop_rate=0.0), rng) == 1)
    assert np.all(embed_dropout_mask((4, 5), AugmentConfig(embed_drop_rate=1.0), rng) == 0)
    m = embed_dropout_mask((100_000,), AugmentConfig(embed_drop_rate=0.1), rng)
    assert abs((m == 0).mean() - 0.1) <= 0.005
    assert set(np.unique(m)) <= {0.0, 1.0}


def test_batch_augmentation_compacts_and_preserves_ids(rng):
    samples = [Sample(0, 1, (2, 3, 4, 5), 1, (), 0.0), Sample(1, 2, (), 0, (), 1.0), Sample(2, 3, (6,), 1, (), 2.0)]
    b = Dataset.from_samples(samples, num_items=8).batch([0, 1, 2])
    v = augment_batch_history(b, AugmentConfig(history_mask_rate=0.5), rng)
    np.testing.assert_array_equal(v.users, b.users)
    np.testing.assert_array_equal(v.items, b.items)
    np.testing.assert_array_equal(v.labels, b.labels)
    counts = v.history_mask.sum(axis=1)
    assert counts[0] >= 1 and counts[1] == 0 and counts[2] == 1
    for r in range(3):
        assert v.history_mask[r, : counts[r]].all() and not v.history_mask[r, counts[r] :].any()
    assert set(v.history[0, : counts[0]]) <= {2, 3, 4, 5}


@pytest.mark.parametrize("kw", [{"history_mask_rate": 1.5}, {"embed_drop_rate": -0.1}])
def test_config_rejects_bad_rates(kw):
    with pytest.raises(ValueError):
        AugmentConfig(**kw)
