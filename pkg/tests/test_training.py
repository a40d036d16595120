import pytest
import torch

from fieldexpand.checkpoint import load_checkpoint, save_checkpoint
from fieldexpand.losses import adv_loss_generator, downsample_target, l1_loss
from fieldexpand.models import ExpansionModel, GrowthState
from fieldexpand.schedule import fade_alpha
from fieldexpand.training import Trainer, TrainingAborted

from tests.conftest import make_tiny_config


def make_trainer(corpus_manifest, **overrides):
    cfg = make_tiny_config(**overrides)
    return Trainer(cfg, corpus_manifest)


def snapshot(module):
    return {n: p.detach().clone() for n, p in module.named_parameters()}


def assert_params_equal(module, before):
    for name, param in module.named_parameters():
        assert torch.equal(param, before[name]), f"{name} changed"


def assert_params_changed(module, before):
    changed = any(
        not torch.equal(p, before[n]) for n, p in module.named_parameters()
    )
    assert changed, "expected at least one parameter to change"


def test_two_stage_schedule_counts(corpus_manifest):
    trainer = make_trainer(
        corpus_manifest, model_base_resolution=16, train_steps_per_stage=10
    )
    assert trainer.schedule.num_stages == 2
    reports = []
    trainer.run(on_report=reports.append)
    assert len(reports) == 20
    assert trainer.grow_events == 1
    assert [r.stage for r in reports] == [0] * 10 + [1] * 10
    assert [r.step for r in reports] == list(range(1, 21))


def test_alpha_follows_fade_schedule(corpus_manifest):
    trainer = make_trainer(corpus_manifest, train_steps_per_stage=4)
    reports = []
    trainer.run(on_report=reports.append)
    for report in reports:
        stage, sis = trainer.schedule.stage_at(report.step - 1)
        expected = fade_alpha(stage, sis, 4, trainer.schedule.fade_fraction)
        assert report.alpha == expected
    assert reports[4].alpha == 0.0  # entry of stage 1 fades in from zero
    assert reports[7].alpha == 1.0


def test_training_deterministic(corpus_manifest):
    a = make_trainer(corpus_manifest, train_steps_per_stage=2)
    b = make_trainer(corpus_manifest, train_steps_per_stage=2)
    reports_a = [a.step_once() for _ in range(5)]
    reports_b = [b.step_once() for _ in range(5)]
    assert reports_a == reports_b


def test_disable_latent_discriminator_contract(corpus_manifest):
    trainer = make_trainer(
        corpus_manifest, ablation_disable_latent_discriminator=True
    )
    before = snapshot(trainer.model.latent_disc)
    reports = [trainer.step_once() for _ in range(3)]
    assert_params_equal(trainer.model.latent_disc, before)
    for report in reports:
        assert report.loss_dz is None
        assert report.loss_gen_z is None


def test_disable_progressive_stays_at_final_stage(corpus_manifest):
    trainer = make_trainer(
        corpus_manifest, ablation_disable_progressive=True, train_steps_per_stage=2
    )
    reports = []
    trainer.run(on_report=reports.append)
    final = trainer.schedule.final_stage
    assert all(r.stage == final for r in reports)
    assert all(r.alpha == 1.0 for r in reports)
    assert len(reports) == trainer.schedule.total_steps


def test_reconstruction_only_uses_crop_as_target(corpus_manifest):
    trainer = make_trainer(corpus_manifest, ablation_reconstruction_only=True)
    # output head sized to the input, not 2x input
    assert trainer.schedule.final_resolution == trainer.config.model.input_size
    trainer.model.grow_to(trainer.schedule.final_stage)
    state = GrowthState(trainer.schedule.final_stage, 1.0)
    targets, crops = trainer._batch_for_step(0)
    out = trainer.model.decoder(trainer.model.encoder(crops), state)
    assert out.shape == crops.shape


def test_gradient_isolation_of_sub_updates(corpus_manifest):
    trainer = make_trainer(corpus_manifest)
    targets, crops = trainer._batch_for_step(0)
    state = trainer.growth_state_for(0)
    targets_stage = downsample_target(targets, trainer.schedule.resolution(0))

    nets = trainer.model.networks()
    before = {name: snapshot(net) for name, net in nets.items()}
    trainer._update_latent_disc(crops, seed=0)
    assert_params_changed(nets["latent_disc"], before["latent_disc"])
    for other in ("encoder", "decoder", "image_disc"):
        assert_params_equal(nets[other], before[other])

    before = {name: snapshot(net) for name, net in nets.items()}
    trainer._update_image_disc(targets_stage, crops, state)
    assert_params_changed(nets["image_disc"], before["image_disc"])
    for other in ("encoder", "decoder", "latent_disc"):
        assert_params_equal(nets[other], before[other])

    before = {name: snapshot(net) for name, net in nets.items()}
    trainer._update_autoencoder(targets_stage, crops, state)
    assert_params_changed(nets["encoder"], before["encoder"])
    assert_params_changed(nets["decoder"], before["decoder"])
    for other in ("latent_disc", "image_disc"):
        assert_params_equal(nets[other], before[other])

    before = {name: snapshot(net) for name, net in nets.items()}
    trainer._update_encoder_regularizer(crops)
    assert_params_changed(nets["encoder"], before["encoder"])
    for other in ("decoder", "latent_disc", "image_disc"):
        assert_params_equal(nets[other], before[other])


def test_lambda_zero_leaves_pure_adversarial_gradients(corpus_manifest):
    trainer = make_trainer(corpus_manifest)
    targets, crops = trainer._batch_for_step(0)
    state = trainer.growth_state_for(0)
    targets_stage = downsample_target(targets, trainer.schedule.resolution(0))
    model = trainer.model
    params = list(model.encoder.parameters()) + list(model.decoder.parameters())

    out = model.decoder(model.encoder(crops), state)
    loss_mixed = 0.0 * l1_loss(out, targets_stage) + adv_loss_generator(
        model.image_disc(out, state)
    )
    grads_mixed = torch.autograd.grad(loss_mixed, params, allow_unused=True)

    out = model.decoder(model.encoder(crops), state)
    loss_adv = adv_loss_generator(model.image_disc(out, state))
    grads_adv = torch.autograd.grad(loss_adv, params, allow_unused=True)

    for gm, ga in zip(grads_mixed, grads_adv):
        if gm is None and ga is None:
            continue
        assert torch.allclose(gm, ga, atol=0.0, rtol=0.0)


def test_ablation_equivalence_to_plain_regression(corpus_manifest):
    cfg = make_tiny_config(
        ablation_disable_latent_discriminator=True,
        train_adv_weight=0.0,
        train_freeze_backbone=False,
    )
    trainer = Trainer(cfg, corpus_manifest)
    targets, crops = trainer._batch_for_step(0)
    state = trainer.growth_state_for(0)

    reference = ExpansionModel(cfg.model, trainer.schedule.num_stages)
    ref_params = list(reference.encoder.parameters()) + list(
        reference.decoder.parameters()
    )
    opt = torch.optim.Adam(
        ref_params,
        lr=cfg.train.learning_rate,
        betas=(cfg.train.adam_beta0, cfg.train.adam_beta1),
        eps=1e-8,
    )
    targets_stage = downsample_target(targets, trainer.schedule.resolution(0))
    out = reference.decoder(reference.encoder(crops), state)
    loss = cfg.train.lambda_recon * l1_loss(out, targets_stage)
    opt.zero_grad()
    loss.backward()
    opt.step()

    trainer.train_step(targets, crops, state, latent_seed=0, step_index=1)
    for (name_a, pa), (name_b, pb) in zip(
        list(trainer.model.encoder.named_parameters())
        + list(trainer.model.decoder.named_parameters()),
        list(reference.encoder.named_parameters())
        + list(reference.decoder.named_parameters()),
    ):
        assert name_a == name_b
        assert torch.allclose(pa, pb, atol=1e-6), name_a


def test_non_finite_loss_aborts_with_report(corpus_manifest):
    trainer = make_trainer(corpus_manifest)
    with torch.no_grad():
        trainer.model.decoder.base["deproject"].weight[0, 0] = float("nan")
    with pytest.raises(TrainingAborted) as excinfo:
        trainer.step_once()
    assert "loss_l1" in excinfo.value.report


def test_freeze_policy_holds_backbone_in_first_epoch(corpus_manifest):
    trainer = make_trainer(corpus_manifest, train_freeze_backbone=True)
    backbone_before = {
        name: snapshot(module)
        for name, module in trainer.model.encoder.backbone_groups().items()
    }
    head_before = snapshot(trainer.model.encoder)
    # epoch 0 spans ceil(train/batch) steps; stay within it
    steps_in_epoch0 = min(2, trainer.batches_per_epoch)
    for _ in range(steps_in_epoch0):
        trainer.step_once()
    for name, module in trainer.model.encoder.backbone_groups().items():
        assert_params_equal(module, backbone_before[name])
    changed = any(
        not torch.equal(p, head_before[n])
        for n, p in trainer.model.encoder.named_parameters()
        if n.startswith("head_")
    )
    assert changed


def test_resume_reproduces_uninterrupted_run(corpus_manifest, tmp_path):
    steps_total = 8
    a = make_trainer(corpus_manifest, train_steps_per_stage=2)
    reports_a = [a.step_once() for _ in range(steps_total)]

    b = make_trainer(corpus_manifest, train_steps_per_stage=2)
    for _ in range(4):
        b.step_once()
    path = tmp_path / "mid.ckpt"
    save_checkpoint(b.to_checkpoint(), path)
    resumed = Trainer.from_checkpoint(load_checkpoint(path), corpus_manifest)
    reports_c = [resumed.step_once() for _ in range(steps_total - 4)]
    assert reports_a[4:] == reports_c


def test_resume_with_mismatched_config_warns(corpus_manifest, tmp_path):
    a = make_trainer(corpus_manifest, train_steps_per_stage=2)
    a.step_once()
    path = tmp_path / "mid.ckpt"
    save_checkpoint(a.to_checkpoint(), path)
    other = make_tiny_config(train_steps_per_stage=2, train_lambda_recon=5.0)
    with pytest.warns(UserWarning):
        Trainer.from_checkpoint(load_checkpoint(path), corpus_manifest, other)
