"""Spatial and channel attention blocks (CBAM-style).

Spatial attention: channel-wise avg+max pooling -> k x k conv -> sigmoid
map, broadcast over channels. Channel attention: global avg+max pooling ->
shared reduction MLP -> sigmoid per-channel scale. Both rescale the input
without changing its shape.
"""

from __future__ import annotations

import torch
from torch import nn

from .errors import ValidationError


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size: int = 7):
        super().__init__()
        if kernel_size % 2 == 0 or kernel_size < 1:
            raise ValidationError(f"kernel_size must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2, bias=True)

    def attention_map(self, x: torch.Tensor) -> torch.Tensor:
        avg = x.mean(dim=-3, keepdim=True)
        mx = x.max(dim=-3, keepdim=True).values
        return torch.sigmoid(self.conv(torch.cat([avg, mx], dim=-3)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.attention_map(x)


class ChannelAttention(nn.Module):
    def __init__(self, channels: int, reduction_ratio: int = 16):
        super().__init__()
        if channels <= 0 or reduction_ratio <= 0 or channels % reduction_ratio:
            raise ValidationError(
                f"channels ({channels}) must be a positive multiple of "
                f"reduction_ratio ({reduction_ratio})"
            )
        self.channels = channels
        self.mlp = nn.Sequential(
            nn.Linear(channels, channels // reduction_ratio),
            nn.ReLU(inplace=True),
            nn.Linear(channels // reduction_ratio, channels),
        )

    def channel_scales(self, x: torch.Tensor) -> torch.Tensor:
        avg = x.mean(dim=(-2, -1))
        mx = x.amax(dim=(-2, -1))
        return torch.sigmoid(self.mlp(avg) + self.mlp(mx))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.channel_scales(x)[..., None, None]
