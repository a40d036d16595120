"""Networks: encoder, progressively grown decoder, latent and image critics.

The decoder (and its mirrored image discriminator) grow stage by stage;
within a stage the new resolution fades in as
``alpha * new_rgb + (1 - alpha) * bilinear_upsample(old_rgb)``. Growing
adds parameters without touching existing ones, so mid-training growth is
reproducible from any checkpoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig


@dataclass(frozen=True)
class GrowthState:
    """Current decoder stage and fade-in weight.

    Stage 0 has no previous resolution, so alpha is pinned to 1 there.
    """

    stage: int
    alpha: float

    def __post_init__(self) -> None:
        if self.stage < 0:
            raise ValueError("stage must be >= 0")
        if self.stage == 0:
            object.__setattr__(self, "alpha", 1.0)
        elif not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def sample_latent(n: int, latent_dim: int, seed: int) -> torch.Tensor:
    """n independent standard-Gaussian latent codes, deterministic per seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    gen = torch.Generator(device="cpu").manual_seed(int(seed))
    return torch.randn(n, latent_dim, generator=gen)


def _init_params(module: nn.Module, seed: int) -> None:
    """Fan-in-scaled normal init over conv/linear weights, zero biases."""
    gen = torch.Generator(device="cpu").manual_seed(int(seed))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight.shape[1] * (
                    m.weight.shape[2] * m.weight.shape[3]
                    if m.weight.dim() == 4
                    else 1
                )
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                if m.bias is not None:
                    m.bias.zero_()


def _stage_seed(base_seed: int, stage: int) -> int:
    return int(np.random.SeedSequence((int(base_seed), stage)).generate_state(1)[0])


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with an identity (or 1x1 projection) shortcut."""

    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.shortcut = (
            nn.Conv2d(in_ch, out_ch, 1, stride=stride)
            if stride != 1 or in_ch != out_ch
            else nn.Identity()
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.relu(self.conv1(x))
        h = self.conv2(h)
        return F.relu(h + self.shortcut(x))


class Encoder(nn.Module):
    """Residual backbone of 4 block groups plus a head projecting to z.

    The head is one extra convolution and a linear projection from the
    flattened feature map, with no output activation (latents live in all
    of R^d). Flattening, rather than pooling, keeps the spatial layout the
    decoder needs to phase-align its expansions.
    """

    def __init__(
        self,
        input_size: int,
        latent_dim: int,
        widths: tuple[int, ...] = (64, 128, 256, 512),
        blocks_per_stage: int = 2,
        stem_downsample: int = 4,
        seed: int = 0,
    ):
        super().__init__()
        if len(widths) != 4:
            raise ValueError("encoder takes exactly 4 block-group widths")
        if stem_downsample not in (1, 2, 4):
            raise ValueError("stem_downsample must be one of 1, 2, 4")
        self.input_size = input_size
        self.latent_dim = latent_dim

        stem_stride = min(2, stem_downsample)
        stem_kernel = 7 if stem_downsample == 4 else 3
        stem_layers: list[nn.Module] = [
            nn.Conv2d(3, widths[0], stem_kernel, stride=stem_stride,
                      padding=stem_kernel // 2),
            nn.ReLU(inplace=True),
        ]
        if stem_downsample == 4:
            stem_layers.append(nn.MaxPool2d(3, stride=2, padding=1))
        self.stem = nn.Sequential(*stem_layers)

        def group(in_ch: int, out_ch: int, stride: int) -> nn.Sequential:
            blocks = [ResidualBlock(in_ch, out_ch, stride)]
            blocks += [ResidualBlock(out_ch, out_ch) for _ in range(blocks_per_stage - 1)]
            return nn.Sequential(*blocks)

        self.block1 = group(widths[0], widths[0], 1)
        self.block2 = group(widths[0], widths[1], 2)
        self.block3 = group(widths[1], widths[2], 2)
        self.block4 = group(widths[2], widths[3], 2)
        feat_side = input_size // stem_downsample
        for _ in range(3):  # block2..block4 halve via stride-2 convolutions
            feat_side = (feat_side + 1) // 2
        self.head_conv = nn.Conv2d(widths[3], widths[3], 3, padding=1)
        self.head_fc = nn.Linear(widths[3] * feat_side * feat_side, latent_dim)
        _init_params(self, seed)

    def backbone_groups(self) -> dict[str, nn.Module]:
        return {
            "stem": self.stem,
            "block1": self.block1,
            "block2": self.block2,
            "block3": self.block3,
            "block4": self.block4,
        }

    def head_modules(self) -> tuple[nn.Module, ...]:
        return (self.head_conv, self.head_fc)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (n, 3, h, w) input, got {tuple(x.shape)}")
        if x.shape[2] != self.input_size or x.shape[3] != self.input_size:
            raise ValueError(
                f"encoder expects {self.input_size}x{self.input_size} crops, "
                f"got {x.shape[2]}x{x.shape[3]}"
            )
        h = self.stem(x)
        h = self.block4(self.block3(self.block2(self.block1(h))))
        h = F.relu(self.head_conv(h))
        return self.head_fc(h.flatten(1))


@dataclass(frozen=True)
class FreezePolicy:
    """Backbone freeze schedule: everything for warmup, then all but the
    last block group."""

    warmup_epochs: int = 1
    frozen_after_warmup: tuple[str, ...] = ("stem", "block1", "block2", "block3")


def apply_freeze_policy(encoder: Encoder, policy: FreezePolicy, epoch: int) -> None:
    """Set requires_grad on backbone groups for the given epoch (idempotent).

    Epoch below the warmup count freezes the whole backbone; afterwards only
    the named groups stay frozen. The head is always trainable.
    """
    groups = encoder.backbone_groups()
    if epoch < policy.warmup_epochs:
        frozen = set(groups)
    else:
        unknown = set(policy.frozen_after_warmup) - set(groups)
        if unknown:
            raise ValueError(f"policy names unknown block groups: {sorted(unknown)}")
        frozen = set(policy.frozen_after_warmup)
    for name, module in groups.items():
        module.requires_grad_(name not in frozen)
    for module in encoder.head_modules():
        module.requires_grad_(True)


def _decoder_channels(base_channels: int, min_channels: int, num_stages: int) -> list[int]:
    return [max(min_channels, base_channels // 2**s) for s in range(num_stages)]


class UpsampleBlock(nn.Module):
    """Nearest-neighbor 2x upsample followed by two convolutions."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.leaky_relu(self.conv1(x), 0.2)
        return F.leaky_relu(self.conv2(x), 0.2)


class ToRGB(nn.Module):
    """1x1 projection to RGB with a tanh head, so outputs live in [-1, 1]."""

    def __init__(self, in_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, 3, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.tanh(self.conv(x))


class ProgressiveDecoder(nn.Module):
    """Linear deprojection to a base grid, then grown upsampling stages."""

    def __init__(
        self,
        latent_dim: int,
        base_resolution: int,
        num_stages: int,
        base_channels: int,
        min_channels: int = 16,
        seed: int = 0,
    ):
        super().__init__()
        if num_stages < 1:
            raise ValueError("num_stages must be >= 1")
        self.latent_dim = latent_dim
        self.base_resolution = base_resolution
        self.num_stages = num_stages
        self.seed = seed
        self.channels = _decoder_channels(base_channels, min_channels, num_stages)

        stage0 = nn.ModuleDict(
            {
                "deproject": nn.Linear(
                    latent_dim, self.channels[0] * base_resolution**2
                ),
                "conv1": nn.Conv2d(self.channels[0], self.channels[0], 3, padding=1),
                "conv2": nn.Conv2d(self.channels[0], self.channels[0], 3, padding=1),
            }
        )
        _init_params(stage0, _stage_seed(seed, 0))
        self.base = stage0
        self.blocks = nn.ModuleList()  # blocks[s - 1] upsamples stage s-1 -> s
        self.to_rgb = nn.ModuleList()
        rgb0 = ToRGB(self.channels[0])
        _init_params(rgb0, _stage_seed(seed, 1000))
        self.to_rgb.append(rgb0)

    @property
    def grown_stage(self) -> int:
        return len(self.blocks)

    def grow(self) -> list[nn.Parameter]:
        """Add the next stage's block and RGB head; returns the new params."""
        stage = self.grown_stage + 1
        if stage >= self.num_stages:
            raise ValueError(f"decoder already at final stage {self.grown_stage}")
        block = UpsampleBlock(self.channels[stage - 1], self.channels[stage])
        _init_params(block, _stage_seed(self.seed, stage))
        rgb = ToRGB(self.channels[stage])
        _init_params(rgb, _stage_seed(self.seed, 1000 + stage))
        self.blocks.append(block)
        self.to_rgb.append(rgb)
        return list(block.parameters()) + list(rgb.parameters())

    def _features(self, z: torch.Tensor, stage: int) -> list[torch.Tensor]:
        h = self.base["deproject"](z)
        h = h.view(-1, self.channels[0], self.base_resolution, self.base_resolution)
        h = F.leaky_relu(self.base["conv1"](h), 0.2)
        h = F.leaky_relu(self.base["conv2"](h), 0.2)
        feats = [h]
        for s in range(1, stage + 1):
            feats.append(self.blocks[s - 1](feats[-1]))
        return feats

    def forward(self, z: torch.Tensor, state: GrowthState) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(
                f"expected (n, {self.latent_dim}) latents, got {tuple(z.shape)}"
            )
        if state.stage >= self.num_stages:
            raise ValueError(
                f"stage {state.stage} out of range [0, {self.num_stages})"
            )
        if state.stage > self.grown_stage:
            raise ValueError(
                f"decoder grown to stage {self.grown_stage}, cannot decode "
                f"stage {state.stage}"
            )
        feats = self._features(z, state.stage)
        new = self.to_rgb[state.stage](feats[state.stage])
        if state.stage == 0 or state.alpha >= 1.0:
            return new
        old = self.to_rgb[state.stage - 1](feats[state.stage - 1])
        old = F.interpolate(old, scale_factor=2, mode="bilinear", align_corners=False)
        return state.alpha * new + (1.0 - state.alpha) * old


class FromRGB(nn.Module):
    """1x1 lift from RGB into the discriminator's feature width."""

    def __init__(self, out_ch: int):
        super().__init__()
        self.conv = nn.Conv2d(3, out_ch, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.leaky_relu(self.conv(x), 0.2)


class DownsampleBlock(nn.Module):
    """Two convolutions followed by 2x average pooling."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, in_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(in_ch, out_ch, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.conv1(x), 0.2)
        x = F.leaky_relu(self.conv2(x), 0.2)
        return F.avg_pool2d(x, 2)


class ImageDiscriminator(nn.Module):
    """Mirror of the decoder: per-stage RGB lifts, downsampling, one logit.

    The fade is symmetric to the decoder's but applied on the input side:
    at fade weight alpha the first downsampled feature map is blended with
    the previous stage's lift of the 2x average-pooled input.
    """

    def __init__(
        self,
        base_resolution: int,
        num_stages: int,
        base_channels: int,
        min_channels: int = 16,
        seed: int = 0,
    ):
        super().__init__()
        self.base_resolution = base_resolution
        self.num_stages = num_stages
        self.seed = seed
        self.channels = _decoder_channels(base_channels, min_channels, num_stages)

        terminal = nn.ModuleDict(
            {
                "conv": nn.Conv2d(self.channels[0], self.channels[0], 3, padding=1),
                "fc": nn.Linear(self.channels[0] * base_resolution**2, 1),
            }
        )
        _init_params(terminal, _stage_seed(seed, 0))
        self.terminal = terminal
        self.from_rgb = nn.ModuleList()
        self.blocks = nn.ModuleList()  # blocks[s - 1] downsamples stage s -> s-1
        lift0 = FromRGB(self.channels[0])
        _init_params(lift0, _stage_seed(seed, 2000))
        self.from_rgb.append(lift0)

    @property
    def grown_stage(self) -> int:
        return len(self.blocks)

    def grow(self) -> list[nn.Parameter]:
        stage = self.grown_stage + 1
        if stage >= self.num_stages:
            raise ValueError(f"discriminator already at final stage {self.grown_stage}")
        block = DownsampleBlock(self.channels[stage], self.channels[stage - 1])
        _init_params(block, _stage_seed(self.seed, stage))
        lift = FromRGB(self.channels[stage])
        _init_params(lift, _stage_seed(self.seed, 2000 + stage))
        self.blocks.append(block)
        self.from_rgb.append(lift)
        return list(block.parameters()) + list(lift.parameters())

    def forward(self, y: torch.Tensor, state: GrowthState) -> torch.Tensor:
        if y.dim() != 4 or y.shape[1] != 3:
            raise ValueError(f"expected (n, 3, h, w) input, got {tuple(y.shape)}")
        if state.stage >= self.num_stages or state.stage > self.grown_stage:
            raise ValueError(
                f"stage {state.stage} unavailable (grown to {self.grown_stage}, "
                f"limit {self.num_stages})"
            )
        expected = self.base_resolution * 2**state.stage
        if y.shape[2] != expected or y.shape[3] != expected:
            raise ValueError(
                f"stage {state.stage} expects {expected}x{expected} images, "
                f"got {y.shape[2]}x{y.shape[3]}"
            )
        if state.stage == 0:
            h = self.from_rgb[0](y)
        else:
            h = self.blocks[state.stage - 1](self.from_rgb[state.stage](y))
            if state.alpha < 1.0:
                old = self.from_rgb[state.stage - 1](F.avg_pool2d(y, 2))
                h = state.alpha * h + (1.0 - state.alpha) * old
            for s in range(state.stage - 1, 0, -1):
                h = self.blocks[s - 1](h)
        h = F.leaky_relu(self.terminal["conv"](h), 0.2)
        return self.terminal["fc"](h.flatten(1)).squeeze(-1)


class LatentDiscriminator(nn.Module):
    """Small fully connected critic on latent codes."""

    def __init__(self, latent_dim: int, hidden: int = 256, layers: int = 3, seed: int = 0):
        super().__init__()
        self.latent_dim = latent_dim
        dims = [latent_dim] + [hidden] * layers
        self.hidden = nn.ModuleList(
            nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:])
        )
        self.out = nn.Linear(hidden, 1)
        _init_params(self, seed)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(
                f"expected (n, {self.latent_dim}) latents, got {tuple(z.shape)}"
            )
        h = z
        for layer in self.hidden:
            h = F.leaky_relu(layer(h), 0.2)
        return self.out(h).squeeze(-1)


class ExpansionModel:
    """The four networks of the expansion autoencoder, grown in lockstep."""

    def __init__(self, cfg: ModelConfig, num_stages: int):
        seeds = np.random.SeedSequence(cfg.seed).generate_state(4)
        self.cfg = cfg
        self.num_stages = num_stages
        self.encoder = Encoder(
            input_size=cfg.input_size,
            latent_dim=cfg.latent_dim,
            widths=tuple(cfg.encoder_widths),
            blocks_per_stage=cfg.encoder_blocks_per_stage,
            stem_downsample=cfg.stem_downsample,
            seed=int(seeds[0]),
        )
        self.decoder = ProgressiveDecoder(
            latent_dim=cfg.latent_dim,
            base_resolution=cfg.base_resolution,
            num_stages=num_stages,
            base_channels=cfg.decoder_base_channels,
            min_channels=cfg.decoder_min_channels,
            seed=int(seeds[1]),
        )
        self.latent_disc = LatentDiscriminator(
            latent_dim=cfg.latent_dim,
            hidden=cfg.latent_disc_hidden,
            layers=cfg.latent_disc_layers,
            seed=int(seeds[2]),
        )
        self.image_disc = ImageDiscriminator(
            base_resolution=cfg.base_resolution,
            num_stages=num_stages,
            base_channels=cfg.decoder_base_channels,
            min_channels=cfg.decoder_min_channels,
            seed=int(seeds[3]),
        )

    @property
    def grown_stage(self) -> int:
        return self.decoder.grown_stage

    @property
    def final_stage(self) -> int:
        return self.num_stages - 1

    def grow_to(self, stage: int) -> dict[str, list[nn.Parameter]]:
        """Grow decoder and image discriminator up to the given stage."""
        new: dict[str, list[nn.Parameter]] = {"decoder": [], "image_disc": []}
        while self.decoder.grown_stage < stage:
            new["decoder"] += self.decoder.grow()
            new["image_disc"] += self.image_disc.grow()
        return new

    def networks(self) -> dict[str, nn.Module]:
        return {
            "encoder": self.encoder,
            "decoder": self.decoder,
            "latent_disc": self.latent_disc,
            "image_disc": self.image_disc,
        }

    def sample_latent(self, n: int, seed: int) -> torch.Tensor:
        return sample_latent(n, self.cfg.latent_dim, seed)

    def named_parameters(self) -> dict[str, nn.Parameter]:
        out: dict[str, nn.Parameter] = {}
        for net_name, net in self.networks().items():
            for pname, param in net.named_parameters():
                out[f"{net_name}.{pname}"] = param
        return out

    def expand(self, crops: torch.Tensor) -> torch.Tensor:
        """Full-model expansion dec(enc(x)) at the final grown stage."""
        state = GrowthState(stage=self.grown_stage, alpha=1.0)
        with torch.no_grad():
            return self.decoder(self.encoder(crops), state)
