"""Hybrid segmentation loss: equal parts categorical cross-entropy and
(1 - mean soft Dice over the classes present in the target)."""

from __future__ import annotations

import torch

EPS = 1e-8


def hybrid_loss(probs: torch.Tensor, target_onehot: torch.Tensor) -> torch.Tensor:
    """`probs` (B, C, H, W) must sum to 1 over classes; `target_onehot` has
    the same shape. Returns 0.5 * CE + 0.5 * (1 - mean soft Dice); >= 0."""
    if probs.shape != target_onehot.shape:
        raise ValueError(f"shape mismatch: {tuple(probs.shape)} vs {tuple(target_onehot.shape)}")
    sums = probs.sum(dim=1)
    if not torch.allclose(sums, torch.ones_like(sums), atol=1e-3):
        raise ValueError("predictions must be normalized per pixel (softmax first)")
    ce = -(target_onehot * torch.log(probs.clamp_min(EPS))).sum(dim=1).mean()
    return 0.5 * ce + 0.5 * (1.0 - _mean_soft_dice(probs, target_onehot))


def hybrid_loss_from_logits(logits: torch.Tensor, target_onehot: torch.Tensor) -> torch.Tensor:
    """Same value as hybrid_loss(softmax(logits), ...), computed via
    log-softmax so gradients survive saturated predictions. Training uses
    this form; the probability interface stays for callers holding
    normalized predictions."""
    if logits.shape != target_onehot.shape:
        raise ValueError(f"shape mismatch: {tuple(logits.shape)} vs {tuple(target_onehot.shape)}")
    log_probs = torch.log_softmax(logits, dim=1)
    ce = -(target_onehot * log_probs).sum(dim=1).mean()
    return 0.5 * ce + 0.5 * (1.0 - _mean_soft_dice(log_probs.exp(), target_onehot))


def _mean_soft_dice(probs: torch.Tensor, target_onehot: torch.Tensor) -> torch.Tensor:
    axes = (0, 2, 3)
    present = target_onehot.sum(dim=axes) > 0
    intersection = (probs * target_onehot).sum(dim=axes)
    denom = probs.sum(dim=axes) + target_onehot.sum(dim=axes)
    dice = (2 * intersection + EPS) / (denom + EPS)
    return dice[present].mean() if present.any() else dice.new_tensor(1.0)


def one_hot(labels: torch.Tensor, n_classes: int = 8) -> torch.Tensor:
    """(B, H, W) integer labels -> (B, C, H, W) one-hot float."""
    return torch.nn.functional.one_hot(labels.long(), n_classes).permute(0, 3, 1, 2).float()
