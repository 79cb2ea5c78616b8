import json

import numpy as np
import pytest

from eventsets import diffcore as dc
from eventsets.core import CapacityError, EventSpan, RunConfig, SequenceSample
from eventsets.model import EventTransformer
from eventsets.synthgen import GeneratorConfig, generate_sequence
from eventsets.train import (
    AdamW,
    TrainingError,
    batch_loss,
    clip_global_norm,
    epoch_order,
    no_decay,
    train,
    train_step,
)

TINY = RunConfig(C=2, N0=4, d_m=16, L=1, heads=2, dropout=0.0, dtype="float64", batch_size=4,
                 epochs=3, checkpoint_every=1)
GEN = GeneratorConfig(C=2, T=16, F=4, min_len=2, max_len=8, events_per_class_rate=0.8)


@pytest.fixture(scope="module")
def samples():
    return [generate_sequence(GEN, 1, i) for i in range(12)]


def one_param(w, lr=1e-4, wd=0.0, **kw):
    t = dc.Tensor(np.array([w]), requires_grad=True)
    return {"w": t}, AdamW(lr={"w": lr}, weight_decay={"w": wd}, **kw)


class TestAdamW:
    def test_first_step(self):
        params, opt = one_param(1.0)
        opt.update(params, {"w": np.array([0.1])})
        np.testing.assert_allclose(params["w"].data, [1 - 1e-4 * 0.1 / (0.1 + 1e-8)], rtol=0, atol=1e-15)
        assert params["w"].data[0] == pytest.approx(1 - 1e-4, abs=2e-11)

    def test_zero_gradient_only_decays(self):
        params, opt = one_param(2.0, lr=1e-3, wd=1e-2)
        opt.update(params, {"w": np.array([0.0])})
        np.testing.assert_allclose(params["w"].data, [2.0 - 1e-3 * 1e-2 * 2.0], rtol=0, atol=1e-15)

    def test_sgd_limit(self):
        # beta1 = beta2 = 0, wd = 0: w <- w - lr * g / (|g| + eps), i.e. plain SGD with step lr / eps when eps >> |g|
        rng = np.random.default_rng(0)
        w0, eps = rng.normal(size=5), 1e6
        t = dc.Tensor(w0.copy(), requires_grad=True)
        opt = AdamW(lr={"w": 0.5}, weight_decay={"w": 0.0}, beta1=0.0, beta2=0.0, eps=eps)
        for _ in range(3):
            g = rng.normal(size=5)
            before = t.data.copy()
            opt.update({"w": t}, {"w": g})
            np.testing.assert_allclose(t.data, before - 0.5 * g / (np.abs(g) + eps), rtol=0, atol=1e-15)
            np.testing.assert_allclose(t.data, before - (0.5 / eps) * g, rtol=0, atol=1e-11)

    def test_moments_shaped_like_params(self, samples):
        m = EventTransformer(TINY, GEN.F)
        opt = AdamW.for_model(m)
        train_step(m, opt, samples[:2])
        assert all(opt.m[k].shape == p.shape for k, p in m.params.items())
        assert opt.step == 1

    def test_decay_exemptions(self):
        assert no_decay("queries") and no_decay("enc.0.ln1.g") and no_decay("mem_norm.b") and no_decay("out_norm.g")
        assert not no_decay("enc.0.attn.q.w") and not no_decay("head_class.b")

    def test_learning_rates(self):
        opt = AdamW.for_model(EventTransformer(TINY, GEN.F))
        assert opt.lr["frame.fc1.w"] == TINY.lr_feat and opt.lr["proj_in.w"] == TINY.lr_main


def test_clip_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_global_norm(g, 1.0) == 5.0
    np.testing.assert_allclose(np.hypot(g["a"], g["b"]), 1.0, atol=1e-12)
    g = {"a": np.array([0.3])}
    clip_global_norm(g, 1.0)
    assert g["a"][0] == 0.3


def test_epoch_order_is_keyed():
    np.testing.assert_array_equal(epoch_order(10, 3, 2), epoch_order(10, 3, 2))
    assert not np.array_equal(epoch_order(50, 3, 2), epoch_order(50, 3, 3))


def test_single_step_decreases_loss(samples):
    wins = 0
    for seed in range(40):
        cfg = RunConfig(**{**TINY.to_dict(), "seed": seed, "lr_main": 1e-4})
        m = EventTransformer(cfg, GEN.F)
        batch = samples[seed % 8 : seed % 8 + 4]
        before = batch_loss(m, batch, train=False)[1]["total"]
        train_step(m, AdamW.for_model(m), batch)
        after = batch_loss(m, batch, train=False)[1]["total"]
        wins += after < before
    assert wins >= 38


def test_overfit_single_sequence():
    g = GeneratorConfig(C=2, T=32)
    s = generate_sequence(g, 3, 0)
    cfg = RunConfig(C=2, N0=5, d_m=32, L=1, heads=2, dropout=0.0, dtype="float64", lr_main=1e-3)
    m = EventTransformer(cfg, g.F)
    opt = AdamW.for_model(m)
    first = batch_loss(m, [s], train=False)[1]["total"]
    for _ in range(500):
        train_step(m, opt, [s])
    assert batch_loss(m, [s], train=False)[1]["total"] < 0.05 * first


def test_errors(samples):
    m = EventTransformer(TINY, GEN.F)
    with pytest.raises(TrainingError):
        train_step(m, AdamW.for_model(m), [])
    odd = SequenceSample("x", 8, np.zeros((8, GEN.F)))
    with pytest.raises(TrainingError, match="share T"):
        train_step(m, AdamW.for_model(m), [samples[0], odd])
    crowded = SequenceSample("y", 16, np.zeros((16, GEN.F)), [EventSpan(3 * i, 3 * i + 2, 1) for i in range(5)])
    with pytest.raises(CapacityError):
        train([crowded], TINY)


def test_non_finite_loss_aborts(samples):
    m = EventTransformer(TINY, GEN.F)
    m.params["head_class.b"].data[:] = np.nan
    with pytest.raises(TrainingError):
        train_step(m, AdamW.for_model(m), samples[:2])


class TestTrainLoop:
    def test_outputs_and_determinism(self, samples, tmp_path):
        _, hist = train(samples, TINY, out_dir=tmp_path / "a", val_samples=samples[:3])
        train(samples, TINY, out_dir=tmp_path / "b", val_samples=samples[:3])
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert names == ["ckpt_e001.bin", "ckpt_e002.bin", "ckpt_e003.bin", "final.bin", "metrics.jsonl"]
        for n in names:
            assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        lines = [json.loads(x) for x in (tmp_path / "a" / "metrics.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in lines] == [1, 2, 3]
        assert set(lines[0]) >= {"total", "boundary", "tiou", "l1", "ce", "val_map50"}
        assert len(hist) == 3

    def test_fresh_run_truncates_log(self, samples, tmp_path):
        train(samples, TINY, out_dir=tmp_path, max_epochs=2)
        train(samples, TINY, out_dir=tmp_path, max_epochs=2)
        assert len((tmp_path / "metrics.jsonl").read_text().splitlines()) == 2

    def test_resume_matches_uninterrupted(self, samples, tmp_path):
        cfg = RunConfig(**{**TINY.to_dict(), "dropout": 0.1})
        _, full = train(samples, cfg, out_dir=tmp_path / "full")
        train(samples, cfg, out_dir=tmp_path / "part", max_epochs=1)
        _, rest = train(samples, cfg, out_dir=tmp_path / "part", resume=tmp_path / "part" / "ckpt_e001.bin")
        assert [r["total"] for r in rest] == [r["total"] for r in full[1:]]
        assert (tmp_path / "part" / "final.bin").read_bytes() == (tmp_path / "full" / "final.bin").read_bytes()
        assert len((tmp_path / "part" / "metrics.jsonl").read_text().splitlines()) == 3
