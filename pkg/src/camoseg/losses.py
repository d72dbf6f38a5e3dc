"""Training objective.

Per decoder stage: boundary-weighted BCE plus boundary-weighted soft IoU on
the stage logits against ground truth resampled to the stage's resolution.
The edge head gets focal + dice supervision against the edge band max-pooled
to the logits grid. The total is the fixed affine combination of the stage
terms (coarse to fine) followed by the weighted edge term.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .config import LossWeights
from .decoder import DecodeOutputs
from .edges import EdgeOutputs
from .errors import ConfigError, ShapeMismatchError


@dataclass
class LossBreakdown:
    """Scalar tensors; ``total`` carries the autograd graph."""

    seg: list[torch.Tensor]
    edge: torch.Tensor
    total: torch.Tensor

    def values(self) -> dict:
        return {
            "seg": [float(s.detach()) for s in self.seg],
            "edge": float(self.edge.detach()),
            "total": float(self.total.detach()),
        }


def boundary_weight_map(gt_mask: torch.Tensor, gt_edge: torch.Tensor,
                        lambda_b: float) -> torch.Tensor:
    """Per-pixel weights 1 + lambda_b * edge_band."""
    if gt_mask.shape != gt_edge.shape:
        raise ShapeMismatchError(
            f"mask {tuple(gt_mask.shape)} and edge band {tuple(gt_edge.shape)} differ"
        )
    return 1.0 + lambda_b * gt_edge


def _safe_log(t: torch.Tensor, eps: float) -> torch.Tensor:
    # clamp the log argument from below only: saturated-correct predictions
    # contribute exactly zero instead of a spurious -log(1 - eps) floor
    return torch.log(t.clamp(min=eps))


def structure_loss(pred_logits: torch.Tensor, gt_mask: torch.Tensor,
                   weight_map: torch.Tensor, lw: LossWeights) -> torch.Tensor:
    """lambda_bce * weighted BCE + lambda_iou * weighted soft-IoU loss.

    Both terms normalize by a single weighted sum over the whole tensor.
    """
    if pred_logits.shape != gt_mask.shape:
        raise ShapeMismatchError(
            f"pred {tuple(pred_logits.shape)} and gt {tuple(gt_mask.shape)} differ"
        )
    p = torch.sigmoid(pred_logits)
    g = gt_mask
    w = weight_map
    bce = -(g * _safe_log(p, lw.epsilon) + (1.0 - g) * _safe_log(1.0 - p, lw.epsilon))
    wbce = (w * bce).sum() / w.sum()
    inter = (w * p * g).sum()
    union = (w * (p + g - p * g)).sum()
    wiou = 1.0 - (inter + lw.epsilon) / (union + lw.epsilon)
    return lw.lambda_bce * wbce + lw.lambda_iou * wiou


def edge_loss(edge_logits: torch.Tensor, gt_edge_low: torch.Tensor,
              lw: LossWeights) -> torch.Tensor:
    """Focal (alpha_t, gamma) + dice on the low-resolution edge band."""
    if edge_logits.shape != gt_edge_low.shape:
        raise ShapeMismatchError(
            f"edge logits {tuple(edge_logits.shape)} and band "
            f"{tuple(gt_edge_low.shape)} differ"
        )
    p = torch.sigmoid(edge_logits)
    g = gt_edge_low
    p_t = p * g + (1.0 - p) * (1.0 - g)
    a_t = lw.focal_alpha * g + (1.0 - lw.focal_alpha) * (1.0 - g)
    focal = (-a_t * (1.0 - p_t) ** lw.focal_gamma * _safe_log(p_t, lw.epsilon)).mean()
    dice = 1.0 - (2.0 * (p * g).sum() + lw.epsilon) / (p.sum() + g.sum() + lw.epsilon)
    return focal + dice


def combine_losses(seg_terms, edge_term, lw: LossWeights):
    """Fixed-order affine combination: sum_i w_i * seg_i, then + lambda_e * edge."""
    weights = lw.stage_weights
    if len(weights) != len(seg_terms):
        if len(seg_terms) == 1:
            weights = [1.0]
        else:
            raise ConfigError(
                f"{len(seg_terms)} stage losses but {len(weights)} stage weights"
            )
    total = weights[0] * seg_terms[0]
    for w_i, s_i in zip(weights[1:], seg_terms[1:]):
        total = total + w_i * s_i
    return total + lw.lambda_e * edge_term


def _dilate(mask: torch.Tensor, radius: int) -> torch.Tensor:
    if radius <= 0:
        return mask
    return F.max_pool2d(mask, kernel_size=2 * radius + 1, stride=1, padding=radius)


def _boundary_band(gt: torch.Tensor, radius: int) -> torch.Tensor:
    """Morphological gradient of a binary mask, dilated by ``radius``."""
    dilated = F.max_pool2d(gt, kernel_size=3, stride=1, padding=1)
    eroded = 1.0 - F.max_pool2d(1.0 - gt, kernel_size=3, stride=1, padding=1)
    return _dilate(dilated - eroded, radius)


def _resample_gt(gt: torch.Tensor, size) -> torch.Tensor:
    if tuple(gt.shape[-2:]) == tuple(size):
        return gt
    soft = F.interpolate(gt, size=tuple(size), mode="bilinear", align_corners=False)
    return (soft > 0.5).to(gt.dtype)


def total_loss(decode: DecodeOutputs, edge: EdgeOutputs, gt_mask: torch.Tensor,
               gt_edge: torch.Tensor, lw: LossWeights) -> LossBreakdown:
    """Full objective from raw outputs and full-resolution ground truth."""
    if gt_mask.shape != gt_edge.shape:
        raise ShapeMismatchError("gt mask and gt edge band must share a shape")

    def exact_scale(coarse, what):
        fh, fw = gt_mask.shape[-2:]
        ch, cw = coarse[-2:]
        if fh % ch or fw % cw or fh // ch != fw // cw:
            raise ShapeMismatchError(
                f"{what} resolution {ch}x{cw} does not evenly divide "
                f"ground truth {fh}x{fw}"
            )
        return fh // ch

    seg_terms = []
    for pred in decode.stage_logits():
        size = pred.shape[-2:]
        scale = exact_scale(size, "stage")
        g = _resample_gt(gt_mask, size)
        band = _boundary_band(g, max(0, round((5 / scale - 2) / 2)))
        weights = boundary_weight_map(g, band, lw.lambda_b)
        seg_terms.append(structure_loss(pred, g, weights, lw))
    k = exact_scale(edge.logits.shape, "edge logits")
    gt_edge_low = F.max_pool2d(gt_edge, kernel_size=k, stride=k)
    edge_term = edge_loss(edge.logits, gt_edge_low, lw)
    return LossBreakdown(
        seg=seg_terms, edge=edge_term, total=combine_losses(seg_terms, edge_term, lw)
    )
