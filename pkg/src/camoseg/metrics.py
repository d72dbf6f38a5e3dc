"""Evaluation metrics for saliency/camouflage maps.

All kernels take a prediction in [0, 1] and a binary ground truth, operate in
float64, and return python floats:

- ``mae``: mean absolute error.
- ``s_measure``: region/object structural similarity (alpha-weighted).
- ``e_measure``: enhanced alignment, adaptive or mean/max over 256 thresholds.
- ``weighted_f``: boundary-aware weighted F (beta^2 = 0.3).
- ``mean_f``: F-measure averaged over the 256-level threshold sweep.

Threshold sweeps share one convention: quantize rint(pred * 255), binarize at
``q >= t`` for t in 0..255. Nearest-foreground substitution in ``weighted_f``
breaks distance ties toward the lexicographically smallest (row, col)
foreground pixel so that independent implementations can agree exactly.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import ConfigError, DataLayoutError, ShapeMismatchError

EPS = 1e-12

CSV_COLUMNS = ["id", "s_alpha", "e_phi_adp", "e_phi_mean", "e_phi_max", "f_w", "f_m", "mae"]

E_VARIANTS = ("adaptive", "mean", "max")


def _validate(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred {pred.shape} and gt {gt.shape} shapes differ")
    if pred.size == 0:
        raise ShapeMismatchError("empty arrays")
    if pred.min() < 0.0 or pred.max() > 1.0:
        raise ValueError("prediction values must lie in [0, 1]")
    if gt.dtype != bool:
        values_ok = np.isin(gt, (0, 1)).all() or np.isin(gt, (0, 255)).all()
        if not values_ok:
            raise ValueError("ground truth must be binary")
        gt = gt > 0
    return pred, gt


def mae(pred, gt) -> float:
    pred, gt = _validate(pred, gt)
    return float(np.abs(pred - gt.astype(np.float64)).mean())


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    m = values.mean()
    s = values.std()
    return 2.0 * m / (m * m + 1.0 + 2.0 * s + EPS)


def _ssim_quadrant(x: np.ndarray, y: np.ndarray) -> float:
    n = x.size
    if n == 0:
        return 0.0
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).sum() / (n - 1 + EPS)
    vy = ((y - my) ** 2).sum() / (n - 1 + EPS)
    cxy = ((x - mx) * (y - my)).sum() / (n - 1 + EPS)
    alpha = 4.0 * mx * my * cxy
    beta = (mx * mx + my * my) * (vx + vy)
    if alpha != 0.0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0.0 else 0.0


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    pred, gt = _validate(pred, gt)
    mu = gt.mean()
    if mu == 0.0:
        return float(1.0 - pred.mean())
    if mu == 1.0:
        return float(pred.mean())

    s_obj = mu * _object_score(pred[gt]) + (1.0 - mu) * _object_score(1.0 - pred[~gt])

    h, w = gt.shape
    gtf = gt.astype(np.float64)
    total = gtf.sum()
    cy = int(np.rint((np.arange(h) * gtf.sum(axis=1)).sum() / total))
    cx = int(np.rint((np.arange(w) * gtf.sum(axis=0)).sum() / total))
    area = h * w
    weights = [
        cy * cx / area,
        cy * (w - cx) / area,
        (h - cy) * cx / area,
    ]
    weights.append(1.0 - sum(weights))
    quads = [
        (pred[:cy, :cx], gtf[:cy, :cx]),
        (pred[:cy, cx:], gtf[:cy, cx:]),
        (pred[cy:, :cx], gtf[cy:, :cx]),
        (pred[cy:, cx:], gtf[cy:, cx:]),
    ]
    s_reg = sum(wq * _ssim_quadrant(p, g) for wq, (p, g) in zip(weights, quads))
    return float(np.clip(alpha * s_obj + (1.0 - alpha) * s_reg, 0.0, 1.0))


def _enhanced_mean(binary: np.ndarray, gt: np.ndarray) -> float:
    if not gt.any():
        enhanced = 1.0 - binary
    elif gt.all():
        enhanced = binary
    else:
        phi_b = binary - binary.mean()
        phi_g = gt.astype(np.float64) - gt.mean()
        xi = 2.0 * phi_b * phi_g / (phi_b**2 + phi_g**2 + EPS)
        enhanced = (xi + 1.0) ** 2 / 4.0
    return float(enhanced.mean())


def e_measure(pred, gt, variant: str = "adaptive") -> float:
    pred, gt = _validate(pred, gt)
    if variant not in E_VARIANTS:
        raise ConfigError(f"unknown e_measure variant {variant!r}; choose from {E_VARIANTS}")
    if variant == "adaptive":
        tau = min(2.0 * pred.mean(), 1.0)
        return _enhanced_mean((pred >= tau).astype(np.float64), gt)
    q = np.rint(pred * 255.0)
    scores = [_enhanced_mean((q >= t).astype(np.float64), gt) for t in range(256)]
    return float(np.mean(scores) if variant == "mean" else np.max(scores))


def _nearest_foreground(err: np.ndarray, gt: np.ndarray):
    """Distance to foreground and the error substituted from the canonical
    nearest foreground pixel (ties -> smallest row, then col).

    Exact despite the float k-d tree query: candidates are re-ranked by their
    integer squared distances, and whenever all k candidates tie the query is
    retried with a larger k so no equidistant pixel is ever cut off.
    """
    dist = ndimage.distance_transform_edt(~gt)
    subst = err.copy()
    h, w = gt.shape
    fg_pts = np.argwhere(gt)
    bg_pts = np.argwhere(~gt)
    if fg_pts.size == 0 or bg_pts.size == 0:
        return dist, subst
    tree = cKDTree(fg_pts)
    pending = np.arange(len(bg_pts))
    k = min(8, len(fg_pts))
    while pending.size:
        _, idx = tree.query(bg_pts[pending], k=k)
        cand = fg_pts[idx.reshape(len(pending), k)]
        delta = cand - bg_pts[pending][:, None, :]
        d2 = (delta * delta).sum(-1)
        tie = d2 == d2.min(axis=1, keepdims=True)
        key = np.where(tie, cand[..., 0] * np.int64(w) + cand[..., 1], np.int64(h) * w)
        chosen = cand[np.arange(len(pending)), key.argmin(1)]
        saturated = tie.all(1) & (k < len(fg_pts))
        done = ~saturated
        py, px = bg_pts[pending[done]].T
        subst[py, px] = err[chosen[done][:, 0], chosen[done][:, 1]]
        pending = pending[saturated]
        k = min(k * 2, len(fg_pts))
    return dist, subst


def _gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = size // 2
    g = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(g[:, None] ** 2 + g[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def weighted_f(pred, gt, beta_sq: float = 0.3) -> float:
    pred, gt = _validate(pred, gt)
    if not gt.any():
        return 1.0 if pred.sum() == 0.0 else 0.0
    err = np.abs(pred - gt.astype(np.float64))
    dist, err_subst = _nearest_foreground(err, gt)
    smoothed = ndimage.correlate(err_subst, _gaussian_kernel(), mode="constant", cval=0.0)
    refined = np.where(gt & (smoothed < err), smoothed, err)
    decay = np.where(gt, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    weighted_err = refined * decay
    n_fg = float(gt.sum())
    tp = n_fg - float(weighted_err[gt].sum())
    fp = float(weighted_err[~gt].sum())
    recall = tp / n_fg
    precision = tp / (tp + fp + EPS)
    return float(
        (1.0 + beta_sq) * precision * recall / (beta_sq * precision + recall + EPS)
    )


def mean_f(pred, gt, beta_sq: float = 0.3) -> float:
    pred, gt = _validate(pred, gt)
    q = np.rint(pred * 255.0).astype(np.int64)
    n_fg = float(gt.sum())
    if n_fg == 0.0 and q.sum() == 0:
        return 1.0
    fg_hist = np.bincount(q[gt], minlength=256).astype(np.float64)
    all_hist = np.bincount(q.ravel(), minlength=256).astype(np.float64)
    tp = np.cumsum(fg_hist[::-1])[::-1]
    predicted = np.cumsum(all_hist[::-1])[::-1]
    precision = tp / (predicted + EPS)
    recall = tp / (n_fg + EPS)
    f = (1.0 + beta_sq) * precision * recall / (beta_sq * precision + recall + EPS)
    return float(f.mean())


def compute_all(pred, gt, alpha: float = 0.5, beta_sq: float = 0.3) -> dict:
    """All per-image metrics as a dict keyed by the CSV column names."""
    return {
        "s_alpha": s_measure(pred, gt, alpha),
        "e_phi_adp": e_measure(pred, gt, "adaptive"),
        "e_phi_mean": e_measure(pred, gt, "mean"),
        "e_phi_max": e_measure(pred, gt, "max"),
        "f_w": weighted_f(pred, gt, beta_sq),
        "f_m": mean_f(pred, gt, beta_sq),
        "mae": mae(pred, gt),
    }


@dataclass
class MetricReport:
    per_image: list[dict]
    aggregate: dict
    evaluated: int
    skipped: list[str] = field(default_factory=list)
    e_variant: str = "adaptive"

    def headline(self) -> dict:
        out = dict(self.aggregate)
        out["e_phi"] = out[f"e_phi_{'adp' if self.e_variant == 'adaptive' else self.e_variant}"]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for row in self.per_image:
                writer.writerow(row)

    def to_json(self, path) -> None:
        payload = {
            "per_image": self.per_image,
            "aggregate": self.headline(),
            "evaluated": self.evaluated,
            "skipped": self.skipped,
            "e_variant": self.e_variant,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def aggregate_rows(rows: list[dict], e_variant: str = "adaptive",
                   skipped: list[str] | None = None) -> MetricReport:
    """Arithmetic means over per-image rows (already in id order)."""
    keys = [c for c in CSV_COLUMNS if c != "id"]
    agg = {k: float(np.mean([row[k] for row in rows])) if rows else 0.0 for k in keys}
    return MetricReport(
        per_image=rows,
        aggregate=agg,
        evaluated=len(rows),
        skipped=skipped or [],
        e_variant=e_variant,
    )


def _worker_count() -> int:
    raw = os.environ.get("SPEG_NUM_WORKERS", "")
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def evaluate_directory(pred_dir, gt_dir, e_variant: str = "adaptive") -> MetricReport:
    """Score every prediction in pred_dir against same-stem masks in gt_dir."""
    if e_variant not in E_VARIANTS:
        raise ConfigError(f"unknown e_measure variant {e_variant!r}")
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)

    def listing(d):
        return {
            p.stem: p
            for p in sorted(d.iterdir())
            if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        } if d.is_dir() else {}

    preds, gts = listing(pred_dir), listing(gt_dir)
    # infer writes stem.png + stem_mask.png side by side; when pointed at
    # such a directory, score the probability maps and drop the companions
    companions = {s for s in preds if s.endswith("_mask") and s[: -len("_mask")] in preds}
    for s in companions:
        del preds[s]
    only_pred = sorted(set(preds) - set(gts))
    only_gt = sorted(set(gts) - set(preds))
    if only_pred or only_gt:
        raise DataLayoutError(
            f"unmatched basenames: predictions without gt {only_pred}, "
            f"gt without predictions {only_gt}",
            unmatched=only_pred + only_gt,
        )
    if not preds:
        raise DataLayoutError(f"no images found in {pred_dir} / {gt_dir}")

    def score(stem: str):
        gt_raw = cv2.imread(str(gts[stem]), cv2.IMREAD_GRAYSCALE)
        pred_raw = cv2.imread(str(preds[stem]), cv2.IMREAD_GRAYSCALE)
        if gt_raw is None or pred_raw is None:
            return stem, None
        gt = gt_raw > 127
        if pred_raw.shape != gt.shape:
            pred_raw = cv2.resize(
                pred_raw, (gt.shape[1], gt.shape[0]), interpolation=cv2.INTER_LINEAR
            )
        pred = pred_raw.astype(np.float64) / 255.0
        return stem, compute_all(pred, gt)

    stems = sorted(preds)
    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(score, stems))
    else:
        results = [score(stem) for stem in stems]

    rows, skipped = [], []
    for stem, metrics_row in results:
        if metrics_row is None:
            skipped.append(stem)
        else:
            rows.append({"id": stem, **metrics_row})
    return aggregate_rows(rows, e_variant=e_variant, skipped=skipped)
