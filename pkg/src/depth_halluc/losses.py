"""Scalar training objectives in least-squares GAN form.

Every function is pure and autograd-friendly: inputs are torch tensors (or
anything torch.as_tensor accepts), the result is a 0-dim tensor. Expectations
over patch score grids are realized as the mean over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ValidationError


@dataclass(frozen=True)
class LossWeights:
    """Weighting of the pixel and cycle reconstruction terms."""

    lambda_pixel: float = 10.0
    lambda_cyc: float = 5.0

    def __post_init__(self):
        if self.lambda_pixel < 0 or self.lambda_cyc < 0:
            raise ValidationError("loss weights must be nonnegative")


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float32)


def _check_same_shape(a: torch.Tensor, b: torch.Tensor, what: str):
    if a.shape != b.shape:
        raise ValidationError(
            f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def gen_adv_loss(fake_scores) -> torch.Tensor:
    """Generator's adversarial term: 0.5 * mean((D(fake) - 1)^2).

    Zero exactly when the discriminator scores every patch of the fake as 1.
    """
    fake_scores = _as_tensor(fake_scores)
    return 0.5 * ((fake_scores - 1.0) ** 2).mean()


def disc_loss(real_scores, fake_scores) -> torch.Tensor:
    """Discriminator objective: 0.5 * mean((D(real) - 1)^2) + 0.5 * mean(D(fake)^2)."""
    real_scores = _as_tensor(real_scores)
    fake_scores = _as_tensor(fake_scores)
    _check_same_shape(real_scores, fake_scores, "disc_loss")
    return 0.5 * ((real_scores - 1.0) ** 2).mean() + 0.5 * (fake_scores**2).mean()


def pixel_loss(gt, pred) -> torch.Tensor:
    """Mean absolute error between ground-truth and generated depth."""
    gt = _as_tensor(gt)
    pred = _as_tensor(pred)
    _check_same_shape(gt, pred, "pixel_loss")
    return (gt - pred).abs().mean()


def cycle_loss(original_rgb, reconstructed_rgb) -> torch.Tensor:
    """Mean absolute error between an RGB image and its depth round-trip."""
    original_rgb = _as_tensor(original_rgb)
    reconstructed_rgb = _as_tensor(reconstructed_rgb)
    _check_same_shape(original_rgb, reconstructed_rgb, "cycle_loss")
    return (original_rgb - reconstructed_rgb).abs().mean()


def teacher_total(fake_depth_scores, gt_depth, pred_depth, weights: LossWeights) -> torch.Tensor:
    """Supervised phase total: adversarial term + lambda_pixel * pixel term."""
    return gen_adv_loss(fake_depth_scores) + weights.lambda_pixel * pixel_loss(
        gt_depth, pred_depth
    )


def student_total(
    fake_depth_scores,
    fake_rgb_scores,
    original_rgb,
    reconstructed_rgb,
    weights: LossWeights,
) -> torch.Tensor:
    """Unpaired phase total: depth-branch adversarial term + rgb-branch
    adversarial term + lambda_cyc * cycle reconstruction term."""
    return (
        gen_adv_loss(fake_depth_scores)
        + gen_adv_loss(fake_rgb_scores)
        + weights.lambda_cyc * cycle_loss(original_rgb, reconstructed_rgb)
    )
