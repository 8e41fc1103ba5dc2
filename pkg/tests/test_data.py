import numpy as np
import pytest

from aqcl.data import (
    BUCKETS,
    DataError,
    Dataset,
    GeneratorConfig,
    IngestError,
    Sample,
    generate,
    ingest,
    split_and_bucket,
)

SMALL = dict(n_users=600, n_items=160, timeline=20_000, length_ranges=((0, 2), (3, 10), (11, 20)))


@pytest.fixture(scope="module")
def big():
    return generate(GeneratorConfig(n_users=10_000, seed=3))


def test_generation_is_byte_identical_for_a_seed(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    generate(GeneratorConfig(**SMALL, seed=9)).dataset.write(a)
    generate(GeneratorConfig(**SMALL, seed=9)).dataset.write(b)
    assert a.read_bytes() == b.read_bytes()
    generate(GeneratorConfig(**SMALL, seed=10)).dataset.write(b)
    assert a.read_bytes() != b.read_bytes()


def test_degenerate_mixture_keeps_lengths_in_range():
    g = generate(GeneratorConfig(**SMALL, mixture=(1, 0, 0), impressions=(1, 1)))
    ds = g.dataset
    assert np.all(g.user_group == 0)
    # one impression per user: the history is exactly the pre-window draw
    assert ds.lengths.max() <= 2


def test_group_sizes_match_mixture(big):
    counts = np.bincount(big.user_group, minlength=3)
    np.testing.assert_array_equal(counts, [6000, 3000, 1000])


def test_label_model_and_base_rate(big):
    cfg = GeneratorConfig(n_users=10_000, seed=3)
    ds = big.dataset
    match = np.array([big.item_interest[i] in big.user_interests[u] for u, i in zip(ds.users, ds.items)])
    assert abs(ds.labels[match].mean() - cfg.p_hi) < 0.02
    assert abs(ds.labels[~match].mean() - cfg.p_lo) < 0.02
    assert abs(ds.labels.mean() - cfg.expected_click_rate()) <= 0.05


def test_histories_hold_only_earlier_clicks(big):
    ds = big.dataset
    first_click = {}
    for j in range(len(ds)):
        u, t = int(ds.users[j]), ds.timestamps[j]
        for h in ds.history(j):
            # either a pre-window click or an earlier in-window one
            assert first_click.get((u, int(h)), -np.inf) < t
        if ds.labels[j]:
            first_click.setdefault((u, int(ds.items[j])), t)
    assert np.all(np.diff(ds.timestamps) >= 0)


def test_users_hold_one_or_two_interests(big):
    assert {len(v) for v in big.user_interests} == {1, 2}
    assert all(len(set(v)) == len(v) for v in big.user_interests)


def test_bucket_fractions_on_generated_data(big):
    sp = split_and_bucket(big.dataset, big.boundaries)
    frac = np.bincount(sp.user_bucket, minlength=3) / len(sp.user_bucket)
    np.testing.assert_allclose(frac, [0.6, 0.3, 0.1], atol=0.02)
    assert np.all(sp.user_bucket[sp.user_length == 0] == 0)


def test_splits_are_chronological(big):
    sp = split_and_bucket(big.dataset, big.boundaries)
    assert sp.train.timestamps.max() < sp.val.timestamps.min()
    assert sp.val.timestamps.max() < sp.test.timestamps.min()
    assert len(sp.train) + len(sp.val) + len(sp.test) == len(big.dataset)


@pytest.mark.parametrize(
    "kw",
    [
        {"mixture": (0.5, 0.3, 0.1)},
        {"n_interests": 1},
        {"length_ranges": ((0, 2), (3, 10), (11, 500))},
        {"impressions": (4, 80)},
        {"p_hi": 1.5},
    ],
)
def test_infeasible_configs_raise(kw):
    with pytest.raises(DataError):
        generate(GeneratorConfig(**{**SMALL, **kw}))


# ------------------------------------------------------------------ ingest

HEADER = "user_id,item_id,timestamp,label,history,device\n"


def write(tmp_path, body, name="log.csv"):
    p = tmp_path / name
    p.write_text(HEADER + body)
    return p


def test_ingest_remaps_ids_and_accepts_empty_history(tmp_path):
    p = write(tmp_path, "alice,x,1,1,,ios\nbob,y,2,0,,web\ncarol,x,3,1,y,ios\nalice,z,4,0,x,ios\n")
    ds, report = ingest(p)
    assert report == []
    assert ds.num_users == 3 and list(ds.users) == [0, 1, 2, 0]
    assert ds.lengths[0] == 0
    assert ds.extra_vocab == (2,)


def test_ingest_rejects_late_history_with_line_number(tmp_path):
    body = "".join(f"u{k},i{k},{k},0,,a\n" for k in range(200))
    # u0 clicks i9 at t=500, yet a row at t=300 already lists it
    body += "u0,i9,500,1,,a\nu0,i5,300,0,i9,a\n"
    ds, report = ingest(write(tmp_path, body))
    assert len(ds) == 201
    assert any(r.startswith("line 203:") and "i9" in r for r in report)


def test_ingest_candidate_clicked_later_in_history(tmp_path):
    body = "u,a,1,1,,x\nu,b,2,0,c,x\nu,c,5,1,,x\n"
    ds, report = ingest(write(tmp_path, body))
    assert len(ds) == 2 and "line 3" in report[0]


def test_ingest_collects_malformed_rows(tmp_path):
    good = "".join(f"u{k},i{k},{k},0,,a\n" for k in range(300))
    p = write(tmp_path, good + "u1,i1,notatime,0,,a\nu2,i2,3,7,,a\n")
    ds, report = ingest(p)
    assert len(ds) == 300
    assert [r.split(":")[0] for r in report] == ["line 302", "line 303"]


def test_ingest_aborts_above_one_percent(tmp_path):
    good = "".join(f"u{k},i{k},{k},0,,a\n" for k in range(50))
    with pytest.raises(IngestError) as exc:
        ingest(write(tmp_path, good + "u,i,1,1\n"))
    assert exc.value.report and "line 52" in exc.value.report[0]


def test_ingest_rejects_bad_header(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("user,item\n1,2\n")
    with pytest.raises(DataError):
        ingest(p)


def test_ingest_serialize_round_trip_is_idempotent(tmp_path):
    g = generate(GeneratorConfig(**SMALL, seed=2))
    p1, p2, p3 = tmp_path / "1.csv", tmp_path / "2.csv", tmp_path / "3.csv"
    g.dataset.write(p1)
    ds1, rep1 = ingest(p1)
    assert rep1 == []
    ds1.write(p2)
    ds2, _ = ingest(p2)
    ds2.write(p3)
    assert p2.read_bytes() == p3.read_bytes()
    assert len(ds1) == len(g.dataset)
    np.testing.assert_array_equal(ds1.labels, g.dataset.labels)


# ------------------------------------------------------------------ splits


def toy_dataset(timestamps, lengths=None):
    lengths = lengths or [0] * len(timestamps)
    samples = [Sample(k % 4, 1, tuple([2] * n), k % 2, (), t) for k, (t, n) in enumerate(zip(timestamps, lengths))]
    return Dataset.from_samples(samples, num_users=4, num_items=3)


def test_same_day_with_boundary_after_is_an_error():
    with pytest.raises(DataError, match="val"):
        split_and_bucket(toy_dataset([5.0] * 8), (6.0, 7.0))


def test_zero_length_user_is_non_active():
    ds = toy_dataset([1, 2, 3, 4, 5, 6, 7, 8], [0, 4, 6, 9, 0, 4, 6, 9])
    sp = split_and_bucket(ds, (6.0, 7.0))
    assert sp.user_length[0] == 0 and BUCKETS[sp.user_bucket[0]] == "non_active"
    # four users: the 60% cut falls at rank 2, the 90% cut rounds past the last rank
    assert [BUCKETS[b] for b in sp.user_bucket] == ["non_active", "non_active", "slightly_active", "slightly_active"]


def test_fixed_thresholds_override():
    ds = toy_dataset([1, 2, 3, 4, 5, 6, 7, 8], [0, 2, 5, 11, 0, 2, 5, 11])
    sp = split_and_bucket(ds, (6.0, 7.0), length_thresholds=(2, 10))
    np.testing.assert_array_equal(sp.user_bucket, [0, 0, 1, 2])


def test_batch_keeps_most_recent_items():
    ds = Dataset.from_samples([Sample(0, 1, (1, 2, 3, 4, 5), 1)], num_items=6)
    b = ds.batch([0], max_history=3)
    np.testing.assert_array_equal(b.history, [[3, 4, 5]])
    assert b.lengths[0] == 5
