"""Training loop: alternating updates, progressive growth, checkpointing.

Each step runs, in order, on one mini-batch: latent-discriminator update,
image-discriminator update, reconstruction update of encoder+decoder
(weighted L1 plus the image-adversarial generator term), and the
regularization update of the encoder alone against the latent
discriminator. Ablation flags skip the latent-discriminator legs, swap the
expansion target for the crop itself, or pin training to the final stage.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from .checkpoint import Checkpoint
from .config import ExperimentConfig
from .data import Manifest, center_crop, epoch_order, load_image_tensor
from .losses import adv_loss_discriminator, adv_loss_generator, downsample_target, l1_loss
from .models import ExpansionModel, FreezePolicy, GrowthState, apply_freeze_policy
from .schedule import fade_alpha


class TrainingAborted(RuntimeError):
    """Raised when a loss turns non-finite; carries the diagnostic report."""

    def __init__(self, message: str, report: dict):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class StepReport:
    step: int
    stage: int
    alpha: float
    loss_l1: float
    loss_dz: float | None
    loss_dy: float
    loss_gen_z: float | None
    loss_gen_y: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class Trainer:
    """Single-writer training driver over a prepared manifest."""

    def __init__(
        self,
        config: ExperimentConfig,
        manifest: Manifest,
        model: ExpansionModel | None = None,
    ):
        config.validate()
        self.config = config
        self.manifest = manifest
        self.schedule = config.schedule()
        self.model = model or ExpansionModel(config.model, self.schedule.num_stages)
        self.records = manifest.split_records("train")
        if not self.records:
            raise ValueError("manifest has no train split records")
        self.batches_per_epoch = math.ceil(
            len(self.records) / config.train.batch_size
        )
        self.global_step = 0
        self.grow_events = 0
        self._image_cache: dict[str, np.ndarray] = {}
        self._epoch_cached = -1
        self._epoch_indices: np.ndarray | None = None

        if config.ablation.disable_progressive:
            new = self.model.grow_to(self.schedule.final_stage)
            self.grow_events += 1 if new["decoder"] else 0

        t = config.train

        def adam(params):
            return torch.optim.Adam(
                params, lr=t.learning_rate, betas=(t.adam_beta0, t.adam_beta1), eps=1e-8
            )

        enc_params = list(self.model.encoder.parameters())
        dec_params = list(self.model.decoder.parameters())
        self.opt_ae = adam(enc_params + dec_params)
        self.opt_reg = adam(enc_params)
        self.opt_dz = adam(list(self.model.latent_disc.parameters()))
        self.opt_dy = adam(list(self.model.image_disc.parameters()))
        self.freeze_policy = FreezePolicy()

    # -- bookkeeping ------------------------------------------------------

    def growth_state_for(self, global_step: int) -> GrowthState:
        if self.config.ablation.disable_progressive:
            return GrowthState(stage=self.schedule.final_stage, alpha=1.0)
        stage, step_in_stage = self.schedule.stage_at(global_step)
        alpha = fade_alpha(
            stage,
            step_in_stage,
            self.schedule.steps_per_stage[stage],
            self.schedule.fade_fraction,
        )
        return GrowthState(stage=stage, alpha=alpha)

    def _ensure_stage(self, stage: int) -> None:
        if stage <= self.model.grown_stage:
            return
        new = self.model.grow_to(stage)
        self.grow_events += 1
        if new["decoder"]:
            self.opt_ae.add_param_group({"params": new["decoder"]})
        if new["image_disc"]:
            self.opt_dy.add_param_group({"params": new["image_disc"]})

    def _epoch_of(self, global_step: int) -> int:
        return global_step // self.batches_per_epoch

    def _batch_for_step(self, global_step: int) -> tuple[torch.Tensor, torch.Tensor]:
        epoch = self._epoch_of(global_step)
        if epoch != self._epoch_cached:
            self._epoch_indices = epoch_order(
                len(self.records), self.config.train.seed, epoch
            )
            self._epoch_cached = epoch
        bs = self.config.train.batch_size
        idx = (global_step % self.batches_per_epoch) * bs
        chunk = self._epoch_indices[idx : idx + bs]
        arrays = []
        for i in chunk:
            rec = self.records[i]
            if rec.image_path not in self._image_cache:
                self._image_cache[rec.image_path] = load_image_tensor(
                    self.manifest.resolve_path(rec)
                )
            arrays.append(self._image_cache[rec.image_path])
        targets = torch.from_numpy(np.stack(arrays))
        crops = torch.from_numpy(np.stack([center_crop(a) for a in arrays]))
        return targets, crops

    def _latent_seed(self, global_step: int) -> int:
        entropy = (self.config.train.seed, 0x1A7E, global_step)
        return int(np.random.SeedSequence(entropy).generate_state(1)[0])

    # -- the four sub-updates ---------------------------------------------

    def _update_latent_disc(self, crops: torch.Tensor, seed: int) -> float:
        with torch.no_grad():
            z_fake = self.model.encoder(crops)
        z_real = self.model.sample_latent(crops.shape[0], seed)
        loss = adv_loss_discriminator(
            self.model.latent_disc(z_real), self.model.latent_disc(z_fake)
        )
        self.opt_dz.zero_grad()
        loss.backward()
        self._clip(self.model.latent_disc.parameters())
        self.opt_dz.step()
        return float(loss.detach())

    def _update_image_disc(
        self, targets_stage: torch.Tensor, crops: torch.Tensor, state: GrowthState
    ) -> float:
        with torch.no_grad():
            fake = self.model.decoder(self.model.encoder(crops), state)
        loss = adv_loss_discriminator(
            self.model.image_disc(targets_stage, state),
            self.model.image_disc(fake, state),
        )
        self.opt_dy.zero_grad()
        loss.backward()
        self._clip(self.model.image_disc.parameters())
        self.opt_dy.step()
        return float(loss.detach())

    def _update_autoencoder(
        self, targets_stage: torch.Tensor, crops: torch.Tensor, state: GrowthState
    ) -> tuple[float, float]:
        t = self.config.train
        out = self.model.decoder(self.model.encoder(crops), state)
        recon = l1_loss(out, targets_stage)
        gen_y = adv_loss_generator(self.model.image_disc(out, state))
        loss = t.lambda_recon * recon + t.adv_weight * gen_y
        self.opt_ae.zero_grad()
        loss.backward()
        self._clip(
            list(self.model.encoder.parameters())
            + list(self.model.decoder.parameters())
        )
        self.opt_ae.step()
        return float(recon.detach()), float(gen_y.detach())

    def _update_encoder_regularizer(self, crops: torch.Tensor) -> float:
        gen_z = adv_loss_generator(
            self.model.latent_disc(self.model.encoder(crops))
        )
        self.opt_reg.zero_grad()
        (self.config.train.adv_weight * gen_z).backward()
        self._clip(self.model.encoder.parameters())
        self.opt_reg.step()
        return float(gen_z.detach())

    def _clip(self, params) -> None:
        clip = self.config.train.grad_clip
        if clip is not None:
            nn.utils.clip_grad_norm_(
                [p for p in params if p.grad is not None], clip
            )

    # -- one step ----------------------------------------------------------

    def train_step(
        self,
        targets: torch.Tensor,
        crops: torch.Tensor,
        state: GrowthState,
        latent_seed: int = 0,
        step_index: int = 0,
    ) -> StepReport:
        cfg = self.config
        resolution = self.schedule.resolution(state.stage)
        base = crops if cfg.ablation.reconstruction_only else targets
        targets_stage = downsample_target(base, resolution)

        loss_dz = None
        loss_gen_z = None
        if not cfg.ablation.disable_latent_discriminator:
            loss_dz = self._update_latent_disc(crops, latent_seed)
        loss_dy = self._update_image_disc(targets_stage, crops, state)
        loss_l1, loss_gen_y = self._update_autoencoder(targets_stage, crops, state)
        if not cfg.ablation.disable_latent_discriminator:
            loss_gen_z = self._update_encoder_regularizer(crops)

        report = StepReport(
            step=step_index,
            stage=state.stage,
            alpha=state.alpha,
            loss_l1=loss_l1,
            loss_dz=loss_dz,
            loss_dy=loss_dy,
            loss_gen_z=loss_gen_z,
            loss_gen_y=loss_gen_y,
        )
        for name, value in asdict(report).items():
            if name.startswith("loss_") and value is not None and not math.isfinite(value):
                raise TrainingAborted(
                    f"non-finite {name} at step {step_index} "
                    f"(stage {state.stage}, alpha {state.alpha:.4f})",
                    asdict(report),
                )
        return report

    def step_once(self) -> StepReport:
        state = self.growth_state_for(self.global_step)
        self._ensure_stage(state.stage)
        if self.config.train.freeze_backbone:
            apply_freeze_policy(
                self.model.encoder, self.freeze_policy, self._epoch_of(self.global_step)
            )
        else:
            self.model.encoder.requires_grad_(True)
        targets, crops = self._batch_for_step(self.global_step)
        report = self.train_step(
            targets,
            crops,
            state,
            latent_seed=self._latent_seed(self.global_step),
            step_index=self.global_step + 1,
        )
        self.global_step += 1
        return report

    def run(
        self,
        on_report: Callable[[StepReport], None] | None = None,
        checkpoint_every: int | None = None,
        on_checkpoint: Callable[[Checkpoint], None] | None = None,
    ) -> int:
        """Train to the end of the schedule; returns the final step count."""
        total = self.schedule.total_steps
        while self.global_step < total:
            report = self.step_once()
            if on_report is not None:
                on_report(report)
            if (
                checkpoint_every
                and on_checkpoint is not None
                and report.step % checkpoint_every == 0
            ):
                on_checkpoint(self.to_checkpoint())
        return self.global_step

    # -- persistence --------------------------------------------------------

    _OPTIMIZERS = ("ae", "reg", "dz", "dy")

    def _optimizers(self) -> dict[str, torch.optim.Optimizer]:
        return {
            "ae": self.opt_ae,
            "reg": self.opt_reg,
            "dz": self.opt_dz,
            "dy": self.opt_dy,
        }

    def to_checkpoint(self) -> Checkpoint:
        param_names = {
            id(p): name for name, p in self.model.named_parameters().items()
        }
        tensors: dict[str, np.ndarray] = {}
        scalars: dict[str, float] = {}
        for name, param in self.model.named_parameters().items():
            tensors[f"model.{name}"] = param.detach().numpy().copy()
        for oname, opt in self._optimizers().items():
            for group in opt.param_groups:
                for p in group["params"]:
                    state = opt.state.get(p)
                    if not state:
                        continue
                    pname = param_names[id(p)]
                    tensors[f"opt.{oname}.{pname}.exp_avg"] = (
                        state["exp_avg"].detach().numpy().copy()
                    )
                    tensors[f"opt.{oname}.{pname}.exp_avg_sq"] = (
                        state["exp_avg_sq"].detach().numpy().copy()
                    )
                    scalars[f"opt.{oname}.{pname}.step"] = float(state["step"])
        if self.global_step > 0:
            last_state = self.growth_state_for(self.global_step - 1)
            alpha = last_state.alpha
        else:
            alpha = 1.0
        return Checkpoint(
            config=self.config.to_dict(),
            config_hash=self.config.hash(),
            step=self.global_step,
            stage=self.model.grown_stage,
            alpha=alpha,
            tensors=tensors,
            scalars=scalars,
        )

    @classmethod
    def from_checkpoint(
        cls,
        ckpt: Checkpoint,
        manifest: Manifest,
        config: ExperimentConfig | None = None,
    ) -> "Trainer":
        saved_config = ExperimentConfig.from_dict(ckpt.config)
        if config is not None and config.hash() != ckpt.config_hash:
            warnings.warn(
                "resume config hash does not match the checkpoint; "
                "continuing with the provided config",
                stacklevel=2,
            )
        trainer = cls(config or saved_config, manifest)
        trainer._ensure_stage(ckpt.stage)
        trainer.grow_events = 0  # growth during restore is not a training event

        params = trainer.model.named_parameters()
        with torch.no_grad():
            for name, param in params.items():
                key = f"model.{name}"
                if key not in ckpt.tensors:
                    raise ValueError(f"checkpoint is missing tensor {key}")
                param.copy_(torch.from_numpy(ckpt.tensors[key]))
        param_names = {id(p): name for name, p in params.items()}
        for oname, opt in trainer._optimizers().items():
            for group in opt.param_groups:
                for p in group["params"]:
                    pname = param_names[id(p)]
                    avg = ckpt.tensors.get(f"opt.{oname}.{pname}.exp_avg")
                    if avg is None:
                        continue
                    sq = ckpt.tensors[f"opt.{oname}.{pname}.exp_avg_sq"]
                    step = ckpt.scalars[f"opt.{oname}.{pname}.step"]
                    opt.state[p] = {
                        "step": torch.tensor(step, dtype=torch.float32),
                        "exp_avg": torch.from_numpy(avg.copy()),
                        "exp_avg_sq": torch.from_numpy(sq.copy()),
                    }
        trainer.global_step = ckpt.step
        return trainer
