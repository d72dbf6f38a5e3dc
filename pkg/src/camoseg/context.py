"""Contextual feature integration.

Mid/deep encoder stages (X2, X3, X4) are resampled to X2's grid,
concatenated in that order, optionally recalibrated channel-wise
(squeeze-excite gates), optionally passed through an efficient atrous
pyramid, and projected to the configured context width. The projection is
always present so the output width holds even with both sub-blocks disabled.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import NetworkConfig
from .errors import ShapeMismatchError
from .layers import ConvBNReLU, resize_to


@dataclass
class ContextFeatures:
    """Integrated context map at 1/8 input resolution."""

    features: torch.Tensor


class SqueezeExcite(nn.Module):
    """Channel gates g = sigmoid(W2 relu(W1 avgpool(F))); output F * g."""

    def __init__(self, channels, reduction=16):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden, bias=False)
        self.fc2 = nn.Linear(hidden, channels, bias=False)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        squeezed = x.mean(dim=(2, 3))
        return torch.sigmoid(self.fc2(F.relu(self.fc1(squeezed))))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.gate(x)[:, :, None, None]


class AtrousPyramid(nn.Module):
    """Efficient atrous pyramid: depthwise dilated branches + global pooling.

    A 1x1 reduction sets the working width, each branch applies a depthwise
    3x3 conv at its dilation rate (zero padding), a pooled branch broadcasts
    global context, and a 1x1 fusion with BN+ReLU returns ``out_channels``.
    """

    def __init__(self, in_channels, out_channels, dilations=(1, 2, 4, 8)):
        super().__init__()
        self.dilations = tuple(dilations)
        mid = out_channels
        self.reduce = ConvBNReLU(in_channels, mid, kernel_size=1)
        self.branches = nn.ModuleList(
            [
                nn.Conv2d(mid, mid, 3, padding=d, dilation=d, groups=mid, bias=False)
                for d in self.dilations
            ]
        )
        self.pool_proj = nn.Conv2d(mid, mid, 1, bias=False)
        self.fuse = ConvBNReLU(mid * (len(self.dilations) + 1), out_channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        needed = 2 * max(self.dilations) + 1
        if min(h, w) < needed:
            warnings.warn(
                f"atrous pyramid input {h}x{w} is smaller than the {needed}px "
                f"stencil of dilation {max(self.dilations)}; branches use zero padding",
                RuntimeWarning,
                stacklevel=2,
            )
        x = self.reduce(x)
        outs = [branch(x) for branch in self.branches]
        pooled = self.pool_proj(x.mean(dim=(2, 3), keepdim=True))
        outs.append(pooled.expand(-1, -1, h, w))
        return self.fuse(torch.cat(outs, dim=1))


class ContextIntegrator(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        widths = cfg.stage_widths()
        concat = widths[1] + widths[2] + widths[3]
        out = cfg.context_width()
        self.attention = (
            SqueezeExcite(concat, cfg.se_reduction) if cfg.enable_channel_attention else None
        )
        self.pyramid = (
            AtrousPyramid(concat, out, cfg.easpp_dilations) if cfg.enable_easpp else None
        )
        self.project = ConvBNReLU(out if cfg.enable_easpp else concat, out, kernel_size=1)

    def forward(self, x2, x3, x4) -> ContextFeatures:
        h, w = x2.shape[-2:]
        if tuple(x3.shape[-2:]) != (h // 2, w // 2) or tuple(x4.shape[-2:]) != (h // 4, w // 4):
            raise ShapeMismatchError(
                "stage features do not share a source resolution: "
                f"X2 {h}x{w}, X3 {tuple(x3.shape[-2:])}, X4 {tuple(x4.shape[-2:])}"
            )
        merged = torch.cat([x2, resize_to(x3, (h, w)), resize_to(x4, (h, w))], dim=1)
        if self.attention is not None:
            merged = self.attention(merged)
        if self.pyramid is not None:
            merged = self.pyramid(merged)
        return ContextFeatures(self.project(merged))


def integrate(x2, x3, x4, cfg: NetworkConfig, module: ContextIntegrator | None = None):
    """Functional wrapper used by tests; builds a fresh module when none given."""
    module = module if module is not None else ContextIntegrator(cfg)
    return module(x2, x3, x4)
