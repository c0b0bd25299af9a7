"""Training losses: least-squares GAN terms, L1 cycle/identity, seg loss.

The segmentation loss is the unweighted sum of a voxel-mean cross-entropy
on the foreground channel and the DICE complement:

    L_seg = (1/N) * (-sum g_i log p_i) + 1 - 2 sum(p g) / (sum p + sum g)
"""

from __future__ import annotations

import torch

_EPS = 1e-12


def lsgan_loss(scores: torch.Tensor, target_real: bool) -> torch.Tensor:
    """Least-squares adversarial loss against an all-ones/zeros target map."""
    target = torch.ones_like(scores) if target_real else torch.zeros_like(scores)
    return torch.mean((scores - target) ** 2)


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return torch.mean(torch.abs(a - b))


def dice_term(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """DICE complement 1 - 2|P∩G|/(|P|+|G|) on soft probabilities."""
    inter = torch.sum(p * g)
    denom = torch.sum(p) + torch.sum(g)
    return 1.0 - 2.0 * inter / torch.clamp(denom, min=_EPS)


def cross_entropy_term(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Mean foreground cross-entropy -(1/N) sum g log p (0*log0 treated as 0)."""
    logp = torch.log(torch.clamp(p, min=_EPS))
    return -torch.sum(g * logp) / g.numel()


def seg_loss(p: torch.Tensor, g: torch.Tensor) -> torch.Tensor:
    """Combined segmentation loss on foreground probabilities vs a binary map."""
    if p.shape != g.shape:
        raise ValueError(f"probability shape {tuple(p.shape)} != label shape "
                         f"{tuple(g.shape)}")
    return cross_entropy_term(p, g) + dice_term(p, g)
