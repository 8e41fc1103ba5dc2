import numpy as np
import pytest

from aqcl.augment import AugmentConfig
from aqcl.codebook import CodebookConfig, SinkhornConfig
from aqcl.data import GeneratorConfig, Splits, generate, split_and_bucket
from aqcl.losses import LossConfig
from aqcl.metrics import Undefined, mean_logloss
from aqcl.model import ModelConfig, is_auxiliary
from aqcl.schedule import AlphaSchedule
from aqcl.trainer import TrainConfig, TrainingDiverged, evaluate, predict_dataset, train


@pytest.fixture(scope="module")
def world():
    g = generate(GeneratorConfig(n_users=400, n_items=64, length_ranges=((0, 2), (3, 5), (6, 8)), timeline=5000, seed=2))
    sp = split_and_bucket(g.dataset, g.boundaries)
    mc = ModelConfig(
        num_users=g.dataset.num_users,
        num_items=g.dataset.num_items,
        extra_vocab=g.dataset.extra_vocab,
        embed_dim=4,
        hidden_dims=(8, 6),
        projector_dims=(8, 8),
        z_dim=4,
    )
    return mc, sp


CB = CodebookConfig(capacity=8)
SK = SinkhornConfig()
AUG = AugmentConfig()


def run(world, loss=None, cb=CB, **tc):
    mc, sp = world
    cfg = TrainConfig(**{"batch_size": 64, "max_epochs": 3, "patience": 2, "seed": 5, **tc})
    return train(mc, loss or LossConfig(top_k=2), cb, SK, AUG, cfg, sp, AlphaSchedule(1.0, 1.0, sp.mean_length))


def same_params(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def test_zero_weight_without_codebook_is_bitwise_the_plain_baseline(world):
    base = run(world, aux="none")
    zero = run(world, loss=LossConfig(aux_weight=0.0, top_k=2), cb=CodebookConfig(capacity=8, enabled=False))
    assert same_params(base.params, zero.params)
    assert [s["logloss"] for s in base.trace.steps] == [s["logloss"] for s in zero.trace.steps]
    assert base.best_val_logloss == zero.best_val_logloss


def test_incomplete_last_batch_is_dropped(world):
    mc, sp = world
    cut = Splits(sp.train.subset(np.arange(560)), sp.val, sp.test, sp.user_bucket, sp.user_length, sp.mean_length)
    res = train(mc, LossConfig(top_k=2), CB, SK, AUG, TrainConfig(batch_size=256, max_epochs=1, seed=0), cut,
                AlphaSchedule(1.0, 1.0, sp.mean_length))
    assert len(res.trace.steps) == 2


def test_same_seed_same_result(world):
    a, b = run(world), run(world)
    assert same_params(a.params, b.params)
    assert np.array_equal(a.codebook, b.codebook)
    assert a.trace.to_jsonl() == b.trace.to_jsonl()


def test_best_epoch_parameters_are_restored(world):
    mc, sp = world
    res = run(world, max_epochs=4, patience=4)
    lls = [e["val_logloss"] for e in res.trace.epochs]
    assert res.best_epoch == int(np.argmin(lls))
    assert mean_logloss(predict_dataset(mc, res.params, sp.val), sp.val.labels) == res.best_val_logloss


def test_codewords_stay_on_unit_sphere_and_usage_is_logged(world):
    res = run(world)
    np.testing.assert_allclose(np.linalg.norm(res.codebook, axis=1), 1.0, atol=1e-12)
    for e in res.trace.epochs:
        assert sum(e["usage"]) == 64 * (len(world[1].train) // 64)


def test_trace_is_finite_for_every_aux_mode(world):
    for kw in ({"aux": "none"}, {"aux": "icl"}, {"aux": "aqcl"}, {"aux": "aqcl", "alpha_const": 0.0}):
        res = run(world, max_epochs=1, **kw)
        for s in res.trace.steps:
            assert all(np.isfinite(v) for v in s.values()), (kw, s)


def test_alpha_const_one_reports_unit_alpha(world):
    res = run(world, max_epochs=1, alpha_const=1.0)
    assert all(s["alpha_mean"] == 1.0 for s in res.trace.steps)


def test_evaluate_needs_neither_projector_nor_codebook(world):
    mc, sp = world
    res = run(world, max_epochs=1)
    slim = {k: v for k, v in res.params.items() if not is_auxiliary(k)}
    full = evaluate(mc, res.params, sp.test, sp.buckets_of(sp.test))
    part = evaluate(mc, slim, sp.test, sp.buckets_of(sp.test))
    assert full.to_json() == part.to_json()


def test_single_class_split_reports_absent_auc(world):
    mc, sp = world
    res = run(world, max_epochs=1)
    ones = sp.test.subset(np.flatnonzero(sp.test.labels == 1))
    rep = evaluate(mc, res.params, ones, sp.buckets_of(ones))
    assert isinstance(rep.overall.auc, Undefined)
    assert np.isfinite(rep.overall.logloss)


def test_non_finite_loss_raises_divergence_with_partial_trace(world, monkeypatch):
    import aqcl.trainer as tr
    from aqcl import ndcore as nd

    real = tr.total_loss
    monkeypatch.setattr(tr, "total_loss", lambda c, a, cfg: nd.mul(real(c, a, cfg), float("nan")))
    with pytest.raises(TrainingDiverged, match="step 0") as exc:
        run(world, max_epochs=1)
    assert len(exc.value.trace.steps) == 1


def test_top_k_above_capacity_is_rejected(world):
    with pytest.raises(ValueError, match="top_k"):
        run(world, loss=LossConfig(top_k=9))
