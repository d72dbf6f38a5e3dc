"""Edge feature extraction head.

Maps integrated context features to a small edge-feature tensor and
single-channel boundary logits at the same 1/8-resolution grid. The features
feed the decoder's edge fusion; the logits receive dedicated supervision.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import NetworkConfig
from .layers import ConvBNReLU


@dataclass
class EdgeOutputs:
    features: torch.Tensor  # (B, edge_width, H/8, W/8)
    logits: torch.Tensor  # (B, 1, H/8, W/8)


class EdgeExtractor(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        width = cfg.edge_width()
        blocks = [ConvBNReLU(cfg.context_width(), width)]
        for _ in range(cfg.efe_depth - 1):
            blocks.append(ConvBNReLU(width, width))
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Conv2d(width, 1, kernel_size=1, bias=True)

    def forward(self, context: torch.Tensor) -> EdgeOutputs:
        features = self.blocks(context)
        return EdgeOutputs(features=features, logits=self.head(features))


def extract_edges(context: torch.Tensor, cfg: NetworkConfig,
                  module: EdgeExtractor | None = None) -> EdgeOutputs:
    module = module if module is not None else EdgeExtractor(cfg)
    return module(context)
