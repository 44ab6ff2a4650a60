"""CBAM: channel attention followed by spatial attention.

The functional forms take explicit parameter tensors and accept feature maps
shaped ``(C, H, W)`` or ``(B, C, H, W)``; the modules own the parameters and
are what the backbone uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class ChannelAttentionParams:
    reduce_weights: torch.Tensor  # C x C/r
    expand_weights: torch.Tensor  # C/r x C

    def __post_init__(self):
        c, hidden = self.reduce_weights.shape
        if self.expand_weights.shape != (hidden, c):
            raise ValueError(
                f"expand weights {tuple(self.expand_weights.shape)} do not match reduce weights {(c, hidden)}"
            )
        if hidden < 1 or c % hidden:
            raise ValueError(f"hidden width {hidden} must divide channel count {c}")

    @property
    def channels(self) -> int:
        return self.reduce_weights.shape[0]

    @property
    def reduction(self) -> int:
        return self.reduce_weights.shape[0] // self.reduce_weights.shape[1]


@dataclass
class SpatialAttentionParams:
    conv_weight: torch.Tensor  # 2 x k x k, k odd; channel 0 sees the mean map, channel 1 the max map
    bias: torch.Tensor  # scalar

    def __post_init__(self):
        w = self.conv_weight
        if w.ndim != 3 or w.shape[0] != 2 or w.shape[1] != w.shape[2] or w.shape[1] % 2 == 0:
            raise ValueError(f"spatial kernel must be 2 x k x k with odd k, got {tuple(w.shape)}")

    @property
    def kernel(self) -> int:
        return self.conv_weight.shape[-1]


def _batched(fmap: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if fmap.ndim == 3:
        return fmap.unsqueeze(0), True
    if fmap.ndim == 4:
        return fmap, False
    raise ValueError(f"feature map must be CxHxW or BxCxHxW, got {tuple(fmap.shape)}")


def channel_attention(fmap: torch.Tensor, params: ChannelAttentionParams) -> torch.Tensor:
    x, squeeze = _batched(fmap)
    if x.shape[1] != params.channels:
        raise ValueError(f"feature map has {x.shape[1]} channels, params expect {params.channels}")

    def mlp(d):
        return torch.relu(d @ params.reduce_weights) @ params.expand_weights

    avg = x.mean(dim=(2, 3))
    mx = x.amax(dim=(2, 3))
    w = torch.sigmoid(mlp(avg) + mlp(mx))
    return w[0] if squeeze else w


def spatial_attention(fmap: torch.Tensor, params: SpatialAttentionParams) -> torch.Tensor:
    x, squeeze = _batched(fmap)
    pooled = torch.stack([x.mean(dim=1), x.amax(dim=1)], dim=1)
    k = params.kernel
    out = F.conv2d(pooled, params.conv_weight.unsqueeze(0), params.bias.reshape(1), padding=k // 2)
    w = torch.sigmoid(out[:, 0])
    return w[0] if squeeze else w


def cbam_apply(fmap: torch.Tensor, cp: ChannelAttentionParams, sp: SpatialAttentionParams) -> torch.Tensor:
    x, squeeze = _batched(fmap)
    x = x * channel_attention(x, cp)[:, :, None, None]
    x = x * spatial_attention(x, sp)[:, None, :, :]
    return x[0] if squeeze else x


class CBAM(nn.Module):
    """Sequential channel and spatial attention with its own parameters."""

    def __init__(self, channels: int, reduction: int = 16, spatial_kernel: int = 7):
        super().__init__()
        reduction = min(reduction, channels)
        if channels % reduction:
            raise ValueError(f"reduction {reduction} must divide channels {channels}")
        hidden = channels // reduction
        self.reduce_weights = nn.Parameter(torch.empty(channels, hidden))
        self.expand_weights = nn.Parameter(torch.empty(hidden, channels))
        self.conv_weight = nn.Parameter(torch.empty(2, spatial_kernel, spatial_kernel))
        self.conv_bias = nn.Parameter(torch.zeros(()))
        # variance scaling on fan-in
        nn.init.uniform_(self.reduce_weights, -1 / math.sqrt(channels), 1 / math.sqrt(channels))
        nn.init.uniform_(self.expand_weights, -1 / math.sqrt(hidden), 1 / math.sqrt(hidden))
        bound = 1 / math.sqrt(2 * spatial_kernel**2)
        nn.init.uniform_(self.conv_weight, -bound, bound)

    @property
    def channel_params(self) -> ChannelAttentionParams:
        return ChannelAttentionParams(self.reduce_weights, self.expand_weights)

    @property
    def spatial_params(self) -> SpatialAttentionParams:
        return SpatialAttentionParams(self.conv_weight, self.conv_bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return cbam_apply(x, self.channel_params, self.spatial_params)
