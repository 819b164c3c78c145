"""Training losses: Smooth L1 against the constant binary mask, Focal loss
on the binary head, BCE as the ablation baseline, and the weighted overall
loss with its stepped pixel-term weight."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ValidationError

PROB_EPS = 1e-7
MAP_SIZE = 14


@dataclass
class LossWeights:
    lambda1_initial: float = 1.0
    lambda1_after: float = 100.0
    lambda1_step_epoch: int = 5
    lambda2: float = 1.0
    gamma: float = 2.0

    def lambda1(self, epoch: int) -> float:
        if epoch < 0:
            raise ValidationError(f"epoch must be >= 0, got {epoch}")
        return self.lambda1_after if epoch >= self.lambda1_step_epoch else self.lambda1_initial


@dataclass
class GroundTruthMask:
    """14x14 constant mask: ones for bona fide, zeros for attack."""

    label: int
    size: int = MAP_SIZE
    mask: torch.Tensor = field(init=False)

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {self.label}")
        self.mask = torch.full((self.size, self.size), float(self.label), dtype=torch.float64)


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def smooth_l1(pred_map: torch.Tensor, gt) -> torch.Tensor:
    """Mean over all pixels of the Huber-style penalty
    z = 0.5*r^2 if |r| < 1 else |r| - 0.5, with r = gt - pred."""
    pred_map = _as_tensor(pred_map)
    target = gt.mask if isinstance(gt, GroundTruthMask) else _as_tensor(gt)
    target = target.to(pred_map.dtype)
    if pred_map.shape[-2:] != target.shape[-2:]:
        raise ValidationError(
            f"prediction map {tuple(pred_map.shape)} does not match "
            f"ground truth {tuple(target.shape)}"
        )
    r = (target - pred_map).abs()
    z = torch.where(r < 1.0, 0.5 * r * r, r - 0.5)
    return z.mean()


def focal_loss(p, y, gamma: float = 2.0) -> torch.Tensor:
    """-(1 - p_t)^gamma * log(p_t) with p_t = p when y=1 else 1-p."""
    p = _as_tensor(p)
    y = _as_tensor(y)
    if not torch.all((y == 0) | (y == 1)):
        raise ValidationError("labels must be 0 or 1")
    if gamma < 0:
        raise ValidationError(f"gamma must be >= 0, got {gamma}")
    p = p.clamp(PROB_EPS, 1.0 - PROB_EPS)
    pt = torch.where(y == 1, p, 1.0 - p)
    return (-((1.0 - pt) ** gamma) * torch.log(pt)).mean()


def bce_loss(p, y) -> torch.Tensor:
    """Binary cross-entropy; identical to focal_loss at gamma=0."""
    return focal_loss(p, y, gamma=0.0)


def overall_loss(pixel, binary, epoch: int, w: LossWeights | None = None) -> torch.Tensor:
    """lambda1(epoch) * pixel + lambda2 * binary."""
    w = w or LossWeights()
    pixel = _as_tensor(pixel)
    binary = _as_tensor(binary)
    if float(pixel.detach()) < 0 or float(binary.detach()) < 0:
        raise ValidationError("component losses must be nonnegative")
    return w.lambda1(epoch) * pixel + w.lambda2 * binary
