"""Reconstruction and adversarial losses, plus target downsampling."""

from __future__ import annotations

import torch
import torch.nn.functional as F


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all elements."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def adv_loss_discriminator(
    logits_real: torch.Tensor, logits_fake: torch.Tensor
) -> torch.Tensor:
    """Binary cross-entropy with logits; the discriminator minimizes this.

    softplus(-r) is -log sigmoid(r) for real logits, softplus(f) is
    -log(1 - sigmoid(f)) for fake ones.
    """
    if logits_real.numel() == 0 or logits_fake.numel() == 0:
        raise ValueError("logit batches must be nonempty")
    return F.softplus(-logits_real).mean() + F.softplus(logits_fake).mean()


def adv_loss_generator(logits_fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss: mean softplus(-logit_fake)."""
    if logits_fake.numel() == 0:
        raise ValueError("logit batch must be nonempty")
    return F.softplus(-logits_fake).mean()


def downsample_target(y: torch.Tensor, resolution: int) -> torch.Tensor:
    """Area-average pool a (n, c, s, s) batch down to the stage resolution.

    Targets exist only at full resolution, so lower stages train against
    their integer-factor block means. resolution == side is the identity.
    """
    if y.dim() != 4 or y.shape[2] != y.shape[3]:
        raise ValueError(f"expected square (n, c, s, s) input, got {tuple(y.shape)}")
    side = y.shape[2]
    if resolution < 1 or side % resolution != 0:
        raise ValueError(f"resolution {resolution} does not divide side {side}")
    factor = side // resolution
    if factor == 1:
        return y
    return F.avg_pool2d(y, factor)
