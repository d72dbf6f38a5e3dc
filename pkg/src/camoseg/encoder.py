"""Four-stage feature encoder.

Hierarchical mode: a stride-4 patchify stem followed by three stride-2
transitions, so stage s (1-based) has resolution H/2^(s+1) and the configured
stage width. Flat mode keeps a single stride-16 token grid processed by
self-attention blocks and maps it to the same four stage shapes with learned
resampling heads, for like-for-like comparisons against the hierarchical
encoder.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import NetworkConfig
from .errors import ShapeMismatchError, WeightLoadError
from .layers import ConvBNReLU, ResidualBlock

log = logging.getLogger(__name__)

BLOCKS_PER_STAGE = 2
FLAT_DEPTH = 4


@dataclass
class MultiScaleFeatures:
    """Stage features X1..X4, coarse to fine resolution halving each step."""

    stages: list[torch.Tensor]

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ShapeMismatchError("expected exactly 4 stage features")

    def __iter__(self):
        return iter(self.stages)

    def __getitem__(self, i):
        return self.stages[i]


def _check_input(x: torch.Tensor) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ShapeMismatchError(f"expected a (B, 3, H, W) batch, got {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % 32 != 0 or w % 32 != 0:
        raise ShapeMismatchError(f"input height/width must be divisible by 32, got {h}x{w}")


def _check_finite(stages: list[torch.Tensor]) -> None:
    for i, t in enumerate(stages):
        if not torch.isfinite(t).all():
            raise FloatingPointError(f"non-finite values in encoder stage {i + 1}")


class HierarchicalEncoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        widths = cfg.stage_widths()
        self.stem = ConvBNReLU(3, widths[0], kernel_size=4, stride=4)
        self.stages = nn.ModuleList()
        self.transitions = nn.ModuleList()
        for i, w in enumerate(widths):
            if i > 0:
                self.transitions.append(ConvBNReLU(widths[i - 1], w, stride=2))
            self.stages.append(
                nn.Sequential(*[ResidualBlock(w) for _ in range(BLOCKS_PER_STAGE)])
            )

    def forward(self, x: torch.Tensor) -> MultiScaleFeatures:
        _check_input(x)
        out = []
        x = self.stages[0](self.stem(x))
        out.append(x)
        for trans, stage in zip(self.transitions, self.stages[1:]):
            x = stage(trans(x))
            out.append(x)
        _check_finite(out)
        return MultiScaleFeatures(out)


class AttentionBlock(nn.Module):
    """Pre-LN multi-head self-attention + MLP over flattened tokens."""

    def __init__(self, dim, num_heads):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * 4), nn.GELU(), nn.Linear(dim * 4, dim)
        )

    def forward(self, tokens):
        y = self.norm1(tokens)
        tokens = tokens + self.attn(y, y, y, need_weights=False)[0]
        return tokens + self.mlp(self.norm2(tokens))


class FlatTokenEncoder(nn.Module):
    """Single-resolution (stride 16) token encoder with resampling heads."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        widths = cfg.stage_widths()
        dim = widths[2]
        num_heads = next(h for h in (4, 2, 1) if dim % h == 0)
        self.patch_embed = nn.Conv2d(3, dim, kernel_size=16, stride=16)
        # Depthwise conv positional encoding keeps the encoder resolution-agnostic.
        self.pos = nn.Conv2d(dim, dim, 3, padding=1, groups=dim)
        self.blocks = nn.ModuleList(
            [AttentionBlock(dim, num_heads) for _ in range(FLAT_DEPTH)]
        )
        self.norm = nn.LayerNorm(dim)
        self.head1 = nn.ConvTranspose2d(dim, widths[0], kernel_size=4, stride=4)
        self.head2 = nn.ConvTranspose2d(dim, widths[1], kernel_size=2, stride=2)
        self.head3 = nn.Conv2d(dim, widths[2], kernel_size=1)
        self.head4 = nn.Conv2d(dim, widths[3], kernel_size=3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> MultiScaleFeatures:
        _check_input(x)
        grid = self.patch_embed(x)
        grid = grid + self.pos(grid)
        b, c, h, w = grid.shape
        tokens = grid.flatten(2).transpose(1, 2)
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.norm(tokens)
        grid = tokens.transpose(1, 2).reshape(b, c, h, w)
        out = [self.head1(grid), self.head2(grid), self.head3(grid), self.head4(grid)]
        _check_finite(out)
        return MultiScaleFeatures(out)


def build_encoder(cfg: NetworkConfig) -> nn.Module:
    if cfg.encoder_mode == "flat":
        return FlatTokenEncoder(cfg)
    return HierarchicalEncoder(cfg)


def load_external_weights(module: nn.Module, container) -> int:
    """Copy tensors from a name->array mapping into matching parameters.

    A tensor is loaded when its name exists in the module state dict and the
    shapes agree. Returns the number of tensors loaded. Unmatched names are
    logged; if nothing matches a non-empty container, raises WeightLoadError.
    """
    state = module.state_dict()
    loaded = 0
    rejected = []
    with torch.no_grad():
        for name, value in container.items():
            tensor = torch.as_tensor(value)
            if name in state and tuple(state[name].shape) == tuple(tensor.shape):
                state[name].copy_(tensor.to(state[name].dtype))
                loaded += 1
            else:
                rejected.append(name)
    if rejected:
        log.warning("skipped %d unmatched weight tensors: %s", len(rejected), rejected)
    if loaded == 0 and container:
        raise WeightLoadError(
            f"no tensor in the container matched the model ({len(rejected)} rejected)",
            rejected=rejected,
        )
    return loaded
