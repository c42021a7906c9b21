"""Training losses and the differentiable flow remap behind the adversarial pairing."""

from __future__ import annotations

import torch
import torch.nn.functional as F

LOGIT_CLIP = 20.0


class LossError(ValueError):
    pass


def _as_mask(mask: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    m = torch.as_tensor(mask, dtype=like.dtype)
    if m.dim() == like.dim() - 1:
        m = m.unsqueeze(1)
    return m.expand(like.shape[0], 1, *like.shape[2:])


def loss_flow(pred: torch.Tensor, gt: torch.Tensor, mask) -> torch.Tensor:
    """Mean absolute flow error over masked pixels and both channels; (B, 2, H, W) inputs."""
    if pred.shape != gt.shape:
        raise LossError(f"shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    m = _as_mask(mask, pred)
    n = m.sum()
    if n <= 0:
        raise LossError("empty mask")
    return (torch.abs(pred - gt) * m).sum() / (n * pred.shape[1])


def loss_completion(pred: torch.Tensor, target: torch.Tensor, hit_mask, region_mask,
                    inside_weight: float = 5.0, outside_weight: float = 1.0) -> torch.Tensor:
    """L1 over ``region_mask`` with the novel pixels (region minus hits) weighted up.

    Equals ``(wi * L1_novel * n_novel + wo * L1_rest * n_rest) / (wi * n_novel + wo * n_rest)``.
    """
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    region = _as_mask(region_mask, pred)
    hit = _as_mask(hit_mask, pred)
    if region.sum() <= 0:
        raise LossError("empty region mask")
    novel = region * (1 - hit)
    rest = region * hit
    weights = inside_weight * novel + outside_weight * rest
    den = weights.sum() * pred.shape[1]
    if den <= 0:
        raise LossError("all loss weights vanish on the region")
    return (torch.abs(pred - target) * weights).sum() / den


def _clipped(logits: torch.Tensor) -> torch.Tensor:
    return torch.clamp(logits, -LOGIT_CLIP, LOGIT_CLIP)


def loss_adversarial(disc, a: torch.Tensor, a_prime: torch.Tensor, labels,
                     mask=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Conditional cross-entropy losses with A real and A' generated.

    Returns ``(d_loss, g_loss)``; d_loss is the negated discriminator
    objective, g_loss the non-saturating generator loss. Logits are clipped
    to +-20. Callers detach ``a_prime`` for the discriminator step.
    """
    m = torch.ones_like(a[:, :1]) if mask is None else _as_mask(mask, a)
    real = _clipped(disc(a, m, labels))
    fake = _clipped(disc(a_prime, m, labels))
    d_loss = F.softplus(-real).mean() + F.softplus(fake).mean()
    g_loss = F.softplus(-fake).mean()
    return d_loss, g_loss


def classifier_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy on logits."""
    return F.binary_cross_entropy_with_logits(logits, targets.to(logits.dtype))


def remap_torch(target: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Differentiable backward remap: out(p) = target(p + flow(p)), zeros outside.

    ``flow`` is (B, 2, H, W) in pixel-index units.
    """
    b, _, h, w = flow.shape
    ys, xs = torch.meshgrid(torch.arange(h, dtype=flow.dtype), torch.arange(w, dtype=flow.dtype),
                            indexing="ij")
    sx = xs + flow[:, 0]
    sy = ys + flow[:, 1]
    th, tw = target.shape[-2:]
    grid = torch.stack([2 * sx / max(tw - 1, 1) - 1, 2 * sy / max(th - 1, 1) - 1], dim=-1)
    return F.grid_sample(target, grid, mode="bilinear", padding_mode="zeros", align_corners=True)
