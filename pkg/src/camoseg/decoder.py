"""Progressive edge-guided decoder.

Each stage doubles resolution (H/8 -> H/4 -> H/2 -> H across the context and
three stages), predicts logits, and passes them to the next stage as a prior.
Edge features/logits are blended into stage features with a per-stage
influence coefficient alpha; the schedule rises then falls to zero so the
final stage refines purely from its prior and features. alpha == 0 bypasses
fusion exactly, which keeps edge-disabled and zero-schedule models bitwise
interchangeable.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import NetworkConfig
from .edges import EdgeOutputs
from .errors import ConfigError
from .layers import ConvBNReLU, resize_to


@dataclass
class DecodeOutputs:
    """Stage logits (coarse to fine), final mask, and stage features."""

    p1: torch.Tensor | None
    p2: torch.Tensor | None
    p3: torch.Tensor
    mask: torch.Tensor
    d1: torch.Tensor | None = None
    d2: torch.Tensor | None = None
    d3: torch.Tensor | None = None

    def stage_logits(self) -> list[torch.Tensor]:
        return [p for p in (self.p1, self.p2, self.p3) if p is not None]


class EdgeFusion(nn.Module):
    """Blend edge evidence into stage features.

    V = (1 - alpha) * U + alpha * (U * sigmoid(E) + proj(F_edge)), with the
    edge tensors bilinearly resampled to U's grid first. When a prior is
    given, sigmoid of the resampled prior logits is concatenated to V.
    """

    def __init__(self, edge_width, stage_width):
        super().__init__()
        self.proj = nn.Conv2d(edge_width, stage_width, kernel_size=1, bias=False)

    def forward(self, u, edge_features, edge_logits, alpha, prior=None):
        if not 0.0 <= alpha <= 1.0:
            raise ConfigError(f"edge influence alpha must lie in [0, 1], got {alpha}")
        if alpha == 0.0:
            v = u
        else:
            size = u.shape[-2:]
            gate = torch.sigmoid(resize_to(edge_logits, size))
            v = (1.0 - alpha) * u + alpha * (u * gate + self.proj(resize_to(edge_features, size)))
        if prior is not None:
            v = torch.cat([v, torch.sigmoid(resize_to(prior, u.shape[-2:]))], dim=1)
        return v


class DecoderStage(nn.Module):
    """Resample input, project to the stage width, fuse edges, refine, predict."""

    def __init__(self, in_channels, width, edge_width, with_prior):
        super().__init__()
        self.project = ConvBNReLU(in_channels, width, kernel_size=1)
        self.fusion = EdgeFusion(edge_width, width)
        self.refine = nn.Sequential(
            ConvBNReLU(width + (1 if with_prior else 0), width),
            ConvBNReLU(width, width),
        )
        self.head = nn.Conv2d(width, 1, kernel_size=1, bias=True)

    def forward(self, x, edge: EdgeOutputs, alpha, prior, out_size):
        u = self.project(resize_to(x, out_size))
        v = self.fusion(u, edge.features, edge.logits, alpha, prior)
        d = self.refine(v)
        return d, self.head(d)


class ProgressiveDecoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        widths = cfg.decoder_widths()
        edge_w = cfg.edge_width()
        ctx_w = cfg.context_width()
        self.single_stage = cfg.decoder_stages == 1
        influence = list(cfg.edge_influence)
        if not cfg.enable_edge_guidance:
            influence = [0.0, 0.0, 0.0]
        if self.single_stage:
            # One stage straight to full resolution; peak influence applies.
            self.alphas = [influence[1]]
            self.stages = nn.ModuleList(
                [DecoderStage(ctx_w, widths[0], edge_w, with_prior=False)]
            )
        else:
            self.alphas = influence
            self.stages = nn.ModuleList(
                [
                    DecoderStage(ctx_w, widths[0], edge_w, with_prior=False),
                    DecoderStage(widths[0], widths[1], edge_w, with_prior=True),
                    DecoderStage(widths[1], widths[2], edge_w, with_prior=True),
                ]
            )
        self.mask_threshold = cfg.mask_threshold

    def forward(self, context: torch.Tensor, edge: EdgeOutputs) -> DecodeOutputs:
        h, w = context.shape[-2:]
        if self.single_stage:
            d3, p3 = self.stages[0](context, edge, self.alphas[0], None, (h * 8, w * 8))
            return DecodeOutputs(
                p1=None, p2=None, p3=p3, mask=binarize(p3, self.mask_threshold), d3=d3
            )
        d1, p1 = self.stages[0](context, edge, self.alphas[0], None, (h * 2, w * 2))
        d2, p2 = self.stages[1](d1, edge, self.alphas[1], p1, (h * 4, w * 4))
        d3, p3 = self.stages[2](d2, edge, self.alphas[2], p2, (h * 8, w * 8))
        return DecodeOutputs(
            p1=p1, p2=p2, p3=p3, mask=binarize(p3, self.mask_threshold),
            d1=d1, d2=d2, d3=d3,
        )


def fuse_stage(u, edge_features, edge_logits, alpha, prior=None,
               module: EdgeFusion | None = None):
    """Functional wrapper over EdgeFusion for direct use in tests."""
    if module is None:
        module = EdgeFusion(edge_features.shape[1], u.shape[1])
    return module(u, edge_features, edge_logits, alpha, prior)


def binarize(logits: torch.Tensor, threshold: float) -> torch.Tensor:
    """Strict sigmoid(logits) > threshold as a 0/1 float tensor."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must lie strictly in (0, 1), got {threshold}")
    return (torch.sigmoid(logits) > threshold).to(logits.dtype)
