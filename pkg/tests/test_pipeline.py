import numpy as np
import pytest

from hybridseg.evalio import gen_synthetic
from hybridseg.losses import LossWeights
from hybridseg.models import ModelConfig
from hybridseg.pipeline import (
    Checkpoint,
    IsolationError,
    TrainConfig,
    decode,
    evaluate,
    infer,
    pretrain_segmentor,
    train_alternate,
)

TINY = ModelConfig(size=16, seg_channels=(4, 8), ref_channels=(4, 8), t_dim=16, xformer_d=16, heads=2)


def tiny_config(**kw) -> TrainConfig:
    base = dict(batch_size=4, pretrain_iters=3, train_iters=3, lr=1e-3, model=TINY)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def data():
    return gen_synthetic(24, size=16, noise_level=0.1, seed=5)


@pytest.fixture(scope="module")
def seg_ckpt(data):
    return pretrain_segmentor(data, tiny_config())


def _params_equal(a: dict, b: dict) -> bool:
    return set(a) == set(b) and all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_zero_iterations_returns_initialization(data):
    from hybridseg.models import build_reference_models

    seg, _ = build_reference_models(tiny_config().model_config())
    ck = pretrain_segmentor(data, tiny_config(pretrain_iters=0))
    assert _params_equal(ck.seg, {k: p.data for k, p in seg.parameters().items()})


@pytest.mark.slow
def test_pretrain_loss_decreases():
    d = gen_synthetic(256, size=16, noise_level=0.1, seed=0)
    ck = pretrain_segmentor(d, tiny_config(pretrain_iters=500, batch_size=8))
    curve = np.array(ck.history["pretrain_loss"])
    assert curve[-50:].mean() < 0.7 * curve[:50].mean()


def test_training_is_bit_exact(data):
    a = train_alternate(data, pretrain_segmentor(data, tiny_config()), tiny_config())
    b = train_alternate(data, pretrain_segmentor(data, tiny_config()), tiny_config())
    assert _params_equal(a.seg, b.seg) and _params_equal(a.ref, b.ref)
    assert a.history == b.history


def test_checkpoint_roundtrip(data, seg_ckpt, tmp_path):
    ck = train_alternate(data, seg_ckpt, tiny_config())
    ck.save(tmp_path / "c.ckpt")
    back = Checkpoint.load(tmp_path / "c.ckpt")
    assert _params_equal(ck.seg, back.seg) and _params_equal(ck.ref, back.ref)
    assert back.batches == ck.batches and back.alt_iters == 3
    assert back.ref_opt.step == ck.ref_opt.step
    r1 = infer(data.images[:4], ck, steps=10, seed=1)
    r2 = infer(data.images[:4], back, steps=10, seed=1)
    assert r1.refined.tobytes() == r2.refined.tobytes()
    assert r1.refined_prob.tobytes() == r2.refined_prob.tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        Checkpoint.load(tmp_path / "x")


def test_isolation_hooks_see_frozen_networks(data, seg_ckpt):
    seen = []

    def hook(event, it, seg, ref):
        seen.append(event)
        if event == "before_g":
            assert not any(p.requires_grad for p in seg.parameters().values())
            assert all(p.requires_grad for p in ref.parameters().values())
        if event == "before_f":
            assert not any(p.requires_grad for p in ref.parameters().values())

    ck = train_alternate(data, seg_ckpt, tiny_config(), hook=hook)
    assert seen == ["before_g", "after_g", "before_f", "after_f"] * 3
    assert ck.history["g_isolation"] == [0.0] * 3 and ck.history["f_isolation"] == [0.0] * 3


def test_tampering_with_frozen_network_is_caught(data, seg_ckpt):
    def hook(event, it, seg, ref):
        if event == "after_f" or event == "before_f":
            return
        if event == "after_g":
            return
        next(iter(seg.parameters().values())).data += 1.0

    with pytest.raises(IsolationError):
        train_alternate(data, seg_ckpt, tiny_config(), hook=hook)


def test_zero_diffusion_weight_matches_pretraining(data, seg_ckpt):
    cfg = tiny_config(weights=LossWeights(lambda_diff=0.0))
    alt = train_alternate(data, seg_ckpt, cfg)
    cont = pretrain_segmentor(data, tiny_config(), init=seg_ckpt)
    assert _params_equal(alt.seg, cont.seg)


def test_warmup_only_updates_refiner(data, seg_ckpt):
    ck = train_alternate(data, seg_ckpt, tiny_config(warmup_g_iters=3))
    assert _params_equal(ck.seg, seg_ckpt.seg)
    assert not _params_equal(ck.ref, seg_ckpt.ref)


def test_zero_steps_returns_prior_draw(data, seg_ckpt):
    r = infer(data.images[:3], seg_ckpt, steps=0, seed=2, trajectory=True, final_draw="sample")
    assert len(r.trajectory) == 1 and r.timesteps == []
    np.testing.assert_array_equal(r.refined, decode(r.prior, r.trajectory[0]))
    rng = [np.random.default_rng([2, j]) for j in range(3)]
    expect = np.stack([(g.random(r.prior[j].shape) < r.prior[j]) for j, g in enumerate(rng)])
    np.testing.assert_array_equal(r.trajectory[0], expect)


@pytest.mark.parametrize("sampler", ["ddim", "ddpm"])
def test_sampling_is_deterministic_and_batch_independent(data, seg_ckpt, sampler):
    a = infer(data.images[:6], seg_ckpt, sampler=sampler, steps=5, seed=3)
    b = infer(data.images[:6], seg_ckpt, sampler=sampler, steps=5, seed=3, batch_size=4)
    assert a.refined.tobytes() == b.refined.tobytes()
    assert a.timesteps == [10, 8, 6, 4, 2]


def test_trajectory_shapes_and_binary_states(data, seg_ckpt):
    r = infer(data.images[:2], seg_ckpt, steps=10, seed=0, trajectory=True)
    assert len(r.trajectory) == 11
    for s in r.trajectory:
        assert s.shape == (2, 16, 16, 2) and set(np.unique(s)) <= {0.0, 1.0}
    assert r.timesteps == list(range(10, 0, -1))


def test_full_step_respacing_is_identity(data, seg_ckpt):
    from hybridseg.schedule import cosine_schedule, respace

    s = cosine_schedule(10)
    assert respace(s, 10) is s


def test_invalid_sampler_and_steps(data, seg_ckpt):
    with pytest.raises(ValueError):
        infer(data.images[:1], seg_ckpt, sampler="euler")
    with pytest.raises(ValueError):
        infer(data.images[:1], seg_ckpt, steps=11)
    with pytest.raises(ValueError):
        tiny_config(sampler="euler").validate()


def test_decode_keeps_most_probable_active_channel():
    prob = np.array([[[0.6, 0.9], [0.2, 0.1], [0.7, 0.4]]])
    active = np.array([[[1, 1], [0, 0], [1, 0]]])
    np.testing.assert_array_equal(decode(prob, active), [[[0, 1], [0, 0], [1, 0]]])


def test_evaluate_reports_small_subset(data, seg_ckpt):
    ev = evaluate(data, seg_ckpt, steps=2, seed=0)
    s = ev.summary()
    assert {"prior_dice", "refined_dice", "prior_small_dice", "refined_small_dice"} <= set(s)
    assert len(ev.prior_small.per_class[0].dice) == int(data.has_small_object().sum())


def test_mismatched_data_rejected(seg_ckpt):
    other = gen_synthetic(4, size=32, seed=0)
    with pytest.raises(ValueError):
        train_alternate(other, seg_ckpt, tiny_config())


def test_refiner_learning_rate_is_separate(data, seg_ckpt):
    ck = train_alternate(data, seg_ckpt, tiny_config(ref_lr=5e-3))
    assert ck.ref_opt.lr == 5e-3 and ck.seg_opt.lr == 1e-3
    with pytest.raises(ValueError):
        tiny_config(ref_lr=0.0).validate()
