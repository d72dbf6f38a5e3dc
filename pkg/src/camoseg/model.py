"""Full network: encoder -> context integration -> edge head -> decoder."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import NetworkConfig
from .context import ContextIntegrator
from .decoder import DecodeOutputs, ProgressiveDecoder
from .edges import EdgeExtractor, EdgeOutputs
from .encoder import MultiScaleFeatures, build_encoder


@dataclass
class ModelOutputs:
    features: MultiScaleFeatures
    context: torch.Tensor
    edge: EdgeOutputs
    decode: DecodeOutputs


class CamoNet(nn.Module):
    """Camouflaged object segmentation network."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = build_encoder(cfg)
        self.context = ContextIntegrator(cfg)
        self.edge = EdgeExtractor(cfg)
        self.decoder = ProgressiveDecoder(cfg)

    def forward(self, x: torch.Tensor) -> ModelOutputs:
        features = self.encoder(x)
        context = self.context(features[1], features[2], features[3]).features
        edge = self.edge(context)
        decode = self.decoder(context, edge)
        return ModelOutputs(features=features, context=context, edge=edge, decode=decode)


def build_model(cfg: NetworkConfig, seed: int | None = None) -> CamoNet:
    """Construct a model, optionally with deterministic initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    return CamoNet(cfg)
