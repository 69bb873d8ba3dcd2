"""Relativistic least-squares GAN losses and the dual-subspace L1 loss.

Expectations over real and generated samples are taken as batch means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch


class DiscriminatorScores(NamedTuple):
    sr_scores: torch.Tensor
    hr_scores: torch.Tensor


def _check(scores: DiscriminatorScores):
    s = scores.sr_scores.reshape(-1)
    h = scores.hr_scores.reshape(-1)
    if s.numel() == 0 or h.numel() == 0:
        raise ValueError("empty batch of discriminator scores")
    if s.numel() != h.numel():
        raise ValueError(f"score batches differ in size: {s.numel()} vs {h.numel()}")
    return s, h


def _relativistic_ls(target: torch.Tensor, other: torch.Tensor) -> torch.Tensor:
    # `target` is pushed one above the mean of `other`, `other` onto the mean of `target`
    return ((target - other.mean() - 1.0) ** 2).mean() + ((other - target.mean()) ** 2).mean()


def generator_gan_loss(scores: DiscriminatorScores) -> torch.Tensor:
    """Generator side: SR scores should exceed the mean HR score by one."""
    s, h = _check(scores)
    return _relativistic_ls(s, h)


def discriminator_gan_loss(scores: DiscriminatorScores) -> torch.Tensor:
    """Discriminator side; the generator loss with the score roles exchanged."""
    s, h = _check(scores)
    return _relativistic_ls(h, s)


def dual_l1_loss(sr_w, hr_w, sr_v, hr_v, alpha: float):
    """Per-element L1 on the W and V projections.

    Returns
    -------
    l1_w, l1_v, combined : torch.Tensor
        ``combined = l1_w + alpha * l1_v``.
    """
    if sr_w.shape != hr_w.shape or sr_v.shape != hr_v.shape:
        raise ValueError("projection shapes do not match")
    l1_w = (sr_w - hr_w).abs().mean()
    l1_v = (sr_v - hr_v).abs().mean()
    return l1_w, l1_v, l1_w + alpha * l1_v


@dataclass
class LossBreakdown:
    l1_w: torch.Tensor
    l1_v: torch.Tensor
    l_g: torch.Tensor
    l_d: torch.Tensor
    total_g: torch.Tensor
    total_d: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(torch.as_tensor(v).detach()) for k, v in vars(self).items()}

    def is_finite(self) -> bool:
        return all(torch.isfinite(torch.as_tensor(v)).all() for v in vars(self).values())


def total_losses(l1, l_g, l_d, beta: float, l1_w=None, l1_v=None) -> LossBreakdown:
    """Combine per-network objectives.

    The generator minimizes ``l1 + beta * l_g``; the discriminator minimizes
    ``l_d`` alone, since the two networks are updated alternately. Without
    the ``l1_w``/``l1_v`` parts, ``l1`` is recorded as an undivided W term.
    """
    return LossBreakdown(
        l1_w=l1 if l1_w is None else l1_w,
        l1_v=torch.zeros_like(torch.as_tensor(l1)) if l1_v is None else l1_v,
        l_g=l_g,
        l_d=l_d,
        total_g=l1 + beta * l_g,
        total_d=l_d,
    )
