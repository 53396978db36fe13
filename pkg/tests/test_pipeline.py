import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from stclstm_depth.backbone import BackboneConfig
from stclstm_depth.checkpoint import bundle_from_state, load_checkpoint
from stclstm_depth.dataset import make_loader
from stclstm_depth.errors import DivergenceError, PreconditionError
from stclstm_depth.model import build_depth_net
from stclstm_depth.pipeline import (
    CHECKPOINT_FILE,
    LOG_COLUMNS,
    LOG_FILE,
    TrainConfig,
    Trainer,
    evaluate,
    read_training_log,
    run_ablation,
    train,
)
from stclstm_depth.synthdata import SceneSpec, generate_dataset, list_sequences, load_sequence, sequence_length


def test_config_validation():
    with pytest.raises(PreconditionError):
        TrainConfig(epochs=2, warmup_epochs=2)
    with pytest.raises(PreconditionError):
        TrainConfig(n_frames=1, use_gan=True)
    with pytest.raises(PreconditionError):
        TrainConfig(preset="huge")
    assert TrainConfig(n_frames=1, use_gan=False).n_frames == 1


def test_train_writes_log_and_checkpoint(dataset_root, fast_config, tmp_path):
    result = train(fast_config(), dataset_root, tmp_path)
    assert result.checkpoint_path == tmp_path / CHECKPOINT_FILE
    lines = (tmp_path / LOG_FILE).read_text().splitlines()
    assert lines[0] == "# " + "\t".join(LOG_COLUMNS)
    entries = read_training_log(tmp_path / LOG_FILE)
    assert len(entries) == 2
    for written, kept in zip(entries, result.log):
        assert (written.epoch, written.step) == (kept.epoch, kept.step)
        assert written.l_total == pytest.approx(kept.l_total, rel=1e-7)
    assert all(math.isnan(e.l_temporal) and not e.adversarial for e in entries)
    assert load_checkpoint(result.checkpoint_path).equals(result.bundle)
    assert result.bundle.epoch == 1
    assert result.history[0].validation is not None


def test_warmup_then_adversarial_updates(dataset_root, fast_config):
    result = Trainer(fast_config(epochs=2, warmup_epochs=1, use_gan=True), dataset_root).train()
    warmup = [e for e in result.log if e.epoch == 0]
    adversarial = [e for e in result.log if e.epoch == 1]
    assert warmup and adversarial
    assert all(not e.adversarial and math.isnan(e.l_temporal) for e in warmup)
    assert all(e.adversarial and e.d_loss >= 0 for e in adversarial)
    for e in warmup:
        assert e.l_total == pytest.approx(e.l_spatial, rel=1e-6)
    for e in adversarial:
        assert e.l_total == pytest.approx(e.l_spatial + 0.1 * e.l_temporal, rel=1e-5)
    assert result.bundle.has_discriminator()


def test_spatial_total_is_weighted_sum(dataset_root, fast_config):
    result = Trainer(fast_config(lambda_grad=0.5, mu_normal=2.0), dataset_root).train()
    for e in result.log:
        assert e.l_spatial == pytest.approx(e.l_depth + 0.5 * e.l_grad + 2.0 * e.l_normal, rel=1e-5)


def test_learning_rate_decays(dataset_root, fast_config):
    result = Trainer(fast_config(epochs=3, lr_decay_every=2, max_steps_per_epoch=1), dataset_root).train()
    lrs = [h.gen_lr for h in result.history]
    assert lrs[0] == lrs[1] == pytest.approx(1e-4)
    assert lrs[2] == pytest.approx(1e-5)


def test_same_seed_same_training(dataset_root, fast_config):
    cfg = fast_config(use_gan=True)
    a = Trainer(cfg, dataset_root).train()
    b = Trainer(cfg, dataset_root).train()
    assert a.log == b.log
    assert a.bundle.equals(b.bundle)


def test_gan_needs_32_pixel_frames(tmp_path, fast_config):
    generate_dataset(tmp_path, 3, 2, SceneSpec(resolution=(16, 16)), seed=0)
    with pytest.raises(PreconditionError):
        Trainer(fast_config(use_gan=True), tmp_path)


def test_overfits_a_single_batch(tmp_path, fast_config):
    spec = SceneSpec(n_objects=1, resolution=(32, 32), depth_range=(2.0, 4.0), background_depth=5.0)
    generate_dataset(tmp_path, 5, 2, spec, seed=1)
    trainer = Trainer(fast_config(batch_sequences=4, gen_lr=2e-3), tmp_path)
    batch = next(iter(make_loader(trainer.train_set, 4, False, 0, 0)))
    first = trainer.train_step(batch, 0, 0).l_spatial
    last = first
    for step in range(1, 300):
        last = trainer.train_step(batch, 0, step).l_spatial
    assert last < 0.2 * first


def test_evaluate_is_repeatable(dataset_root, fast_config):
    bundle = Trainer(fast_config(), dataset_root).train().bundle
    a = evaluate(bundle, dataset_root, n_frames_eval=2)
    b = evaluate(bundle, dataset_root, n_frames_eval=2)
    assert a == b
    assert a.n_sequences == len(list_sequences(dataset_root))


def test_evaluate_constant_predictor(dataset_root):
    net = build_depth_net(BackboneConfig.from_preset("tiny"), use_clstm=True, seed=0)
    last = net.head.refine[-1]
    with torch.no_grad():
        last.weight.zero_()
        last.bias.fill_(1.0)
    constant = (F.softplus(torch.tensor(1.0)) + 0.01).item()

    errors = []
    for sid in list_sequences(dataset_root):
        sample = load_sequence(dataset_root, sid, 0, sequence_length(dataset_root, sid))
        g = sample.depth[sample.valid_mask].astype(np.float64)
        errors.append(np.abs(constant - g) / g)
    expected_rel = float(np.concatenate(errors).mean())

    report = evaluate(bundle_from_state(net), dataset_root, n_frames_eval=2)
    assert report.rel == pytest.approx(expected_rel, rel=1e-5)


def test_evaluate_rejects_short_windows(dataset_root):
    net = build_depth_net(BackboneConfig.from_preset("tiny"), use_clstm=True, seed=0)
    with pytest.raises(PreconditionError):
        evaluate(bundle_from_state(net), dataset_root, n_frames_eval=1)


def test_divergence_keeps_last_finite_state(dataset_root, fast_config, monkeypatch):
    original = Trainer.train_step

    def diverging(self, batch, epoch=0, step=0):
        if step == 1:
            raise DivergenceError("pérdida del generador = nan", None, epoch, step)
        return original(self, batch, epoch, step)

    monkeypatch.setattr(Trainer, "train_step", diverging)
    with pytest.raises(DivergenceError) as info:
        Trainer(fast_config(), dataset_root).train()
    assert info.value.bundle is not None
    assert info.value.step == 1
    assert info.value.bundle.epoch == 0


def test_ablation_smoke(dataset_root, fast_config, tmp_path):
    result = run_ablation(
        fast_config(max_steps_per_epoch=1),
        dataset_root,
        dataset_root,
        seeds=(0,),
        variants=("2dcnn", "st-clstm"),
        n_frames_eval=2,
        out_dir=tmp_path,
    )
    assert [r.variant for r in result.rows] == ["2dcnn", "st-clstm"]
    table = (tmp_path / "ablation.tsv").read_text().splitlines()
    assert table[0].startswith("variant\tn_frames")
    assert len(table) == 3
    assert result.median("2dcnn", "rel") == result.rows[0].report.rel
    with pytest.raises(PreconditionError):
        run_ablation(fast_config(), dataset_root, dataset_root, variants=("3dcnn",))


@pytest.mark.slow
def test_ablation_ordering(tmp_path):
    spec = SceneSpec(resolution=(64, 64))
    generate_dataset(tmp_path / "train", 200, 5, spec, seed=11)
    generate_dataset(tmp_path / "eval", 4, 16, spec, seed=12)
    cfg = TrainConfig(epochs=6, warmup_epochs=2, n_frames=5, batch_sequences=4, gen_lr=1e-3, progress=False)
    result = run_ablation(cfg, tmp_path / "train", tmp_path / "eval", seeds=(0, 1, 2), n_frames_eval=16)
    baseline_tcc = result.median("2dcnn", "tcc")
    clstm_tcc = result.median("st-clstm", "tcc")
    assert clstm_tcc >= baseline_tcc + 0.005
    assert result.median("st-clstm+gan", "tcc") >= clstm_tcc
    clstm_by_seed = {r.seed: r.report.tcc for r in result.select("st-clstm")}
    for row in result.select("st-clstm+gan"):
        assert row.report.tcc >= clstm_by_seed[row.seed] - 0.01
    assert result.median("st-clstm", "rel") <= result.median("2dcnn", "rel")


def test_discriminator_clips_share_the_invalid_pattern(dataset_root, fast_config):
    trainer = Trainer(fast_config(use_gan=True, augment=True), dataset_root)
    batch = next(iter(make_loader(trainer.train_set, 2, False, 0, 0)))
    mask = batch["mask"].clone()
    mask[..., :4] = False
    depth = torch.where(mask, batch["depth"], torch.zeros_like(batch["depth"]))
    with torch.no_grad():
        pred = trainer.generator(batch["rgb"])
    real, fake = trainer.discriminator_clips(batch["rgb"], pred, depth, mask, epoch=1, step=0)
    real_zero = real.values[:, :, 3] == 0
    fake_zero = fake.values[:, :, 3] == 0
    assert torch.equal(real_zero, fake_zero)
    assert torch.equal(fake_zero, ~mask[:, :, 0])
    assert (real.label, fake.label) == ("real", "fake")
