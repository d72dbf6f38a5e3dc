"""Training engine: AdamW with split learning rates, plateau scheduling,
global-norm gradient clipping, CSV step logs, and byte-stable checkpoints.
"""

from __future__ import annotations

import math
import os
import pickle
from dataclasses import dataclass, asdict, field
from pathlib import Path

import cv2
import numpy as np
import torch

from .config import LossWeights, NetworkConfig, TrainConfig
from .data import Sample, load_dataset, preprocess, make_edge_map
from .errors import CheckpointError, NonFiniteLossError
from .losses import total_loss
from .metrics import MetricReport, aggregate_rows, compute_all
from .model import CamoNet, build_model

CHECKPOINT_MAGIC = b"SPEGCKP1"
CHECKPOINT_VERSION = "1"
LOG_COLUMNS = "step,epoch,total,seg1,seg2,seg3,edge,lr"


def clip_global_norm(grads: list[torch.Tensor], threshold: float) -> float:
    """Scale gradients in place so their global L2 norm is at most threshold.

    Returns the pre-clip norm. Raises on a non-finite norm.
    """
    if threshold <= 0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    total = 0.0
    for g in grads:
        total += float((g.double() ** 2).sum())
    norm = math.sqrt(total)
    if not math.isfinite(norm):
        raise NonFiniteLossError(f"gradient norm is non-finite ({norm})")
    if norm > threshold:
        scale = threshold / norm
        with torch.no_grad():
            for g in grads:
                g.mul_(scale)
    return norm


def _tree_to_numpy(obj):
    if isinstance(obj, torch.Tensor):
        return obj.detach().cpu().numpy()
    if isinstance(obj, dict):
        return {k: _tree_to_numpy(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_tree_to_numpy(v) for v in obj)
    return obj


def _tree_to_torch(obj):
    if isinstance(obj, np.ndarray):
        return torch.from_numpy(obj.copy())
    if isinstance(obj, dict):
        return {k: _tree_to_torch(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_tree_to_torch(v) for v in obj)
    return obj


@dataclass
class Checkpoint:
    """Self-describing training state. Serialized as magic + pickled dict."""

    network: dict
    train: dict
    weights: dict
    optimizer: dict
    epoch: int
    best: float
    version: str = CHECKPOINT_VERSION

    def save(self, path) -> None:
        payload = {
            "version": self.version,
            "network": self.network,
            "train": self.train,
            "weights": self.weights,
            "optimizer": self.optimizer,
            "epoch": self.epoch,
            "best": self.best,
        }
        tmp = Path(str(path) + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(pickle.dumps(payload, protocol=4))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
        try:
            payload = pickle.loads(blob[len(CHECKPOINT_MAGIC):])
        except Exception as exc:
            raise CheckpointError(f"{path} is corrupt: {exc}") from exc
        if payload.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {payload.get('version')!r}"
            )
        return cls(**payload)

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(**self.network)

    def load_into(self, model: CamoNet) -> None:
        state = {k: torch.from_numpy(np.array(v)) for k, v in self.weights.items()}
        try:
            model.load_state_dict(state)
        except RuntimeError as exc:
            raise CheckpointError(f"weights do not fit the model: {exc}") from exc


def model_to_checkpoint(model: CamoNet, train_cfg: TrainConfig,
                        optimizer: torch.optim.Optimizer, epoch: int,
                        best: float) -> Checkpoint:
    return Checkpoint(
        network=asdict(model.cfg),
        train=asdict(train_cfg),
        weights={k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()},
        optimizer=_tree_to_numpy(optimizer.state_dict()),
        epoch=epoch,
        best=best,
    )


def prepare_tensors(samples: list[Sample], size: int):
    """Preprocess samples once: list of (image, mask, edge_band) tensors."""
    out = []
    for s in samples:
        x = torch.from_numpy(preprocess(s.image, size))
        if s.mask.shape == (size, size):
            mask = s.mask
        else:
            soft = cv2.resize(s.mask.astype(np.float32), (size, size),
                              interpolation=cv2.INTER_LINEAR)
            mask = (soft > 0.5).astype(np.uint8)
        edge = make_edge_map(mask)
        out.append(
            (
                x,
                torch.from_numpy(mask[None].astype(np.float32)),
                torch.from_numpy(edge[None].astype(np.float32)),
            )
        )
    return out


@dataclass
class TrainResult:
    model: CamoNet
    checkpoint: Checkpoint
    checkpoint_path: Path
    log_path: Path
    best_val: float
    steps: int
    history: list[dict] = field(default_factory=list)


def _monitor_loss(model: CamoNet, tensors: list, lw: LossWeights,
                  batch_size: int) -> float:
    """Mean total loss over prepared tensors, no metrics, no weight updates."""
    was_training = model.training
    model.eval()
    loss_sum = 0.0
    with torch.no_grad():
        for start in range(0, len(tensors), batch_size):
            chunk = tensors[start:start + batch_size]
            x = torch.stack([t[0] for t in chunk])
            m = torch.stack([t[1] for t in chunk])
            e = torch.stack([t[2] for t in chunk])
            out = model(x)
            lb = total_loss(out.decode, out.edge, m, e, lw)
            loss_sum += float(lb.total) * len(chunk)
    if was_training:
        model.train()
    return loss_sum / max(1, len(tensors))


def validate(model: CamoNet, samples: list[Sample], lw: LossWeights,
             batch_size: int = 4) -> tuple[float, MetricReport]:
    """Mean total loss and a metric report on binarized full-res predictions."""
    size = model.cfg.input_size
    tensors = prepare_tensors(samples, size)
    was_training = model.training
    model.eval()
    loss_sum = 0.0
    rows = []
    with torch.no_grad():
        for start in range(0, len(tensors), batch_size):
            chunk = tensors[start:start + batch_size]
            x = torch.stack([t[0] for t in chunk])
            m = torch.stack([t[1] for t in chunk])
            e = torch.stack([t[2] for t in chunk])
            out = model(x)
            lb = total_loss(out.decode, out.edge, m, e, lw)
            loss_sum += float(lb.total) * len(chunk)
            for j, sample in enumerate(samples[start:start + batch_size]):
                pred01 = out.decode.mask[j, 0].numpy().astype(np.float64)
                gt = sample.mask > 0
                if pred01.shape != gt.shape:
                    soft = cv2.resize(pred01.astype(np.float32),
                                      (gt.shape[1], gt.shape[0]),
                                      interpolation=cv2.INTER_LINEAR)
                    pred01 = (soft > 0.5).astype(np.float64)
                rows.append({"id": sample.id, **compute_all(pred01, gt)})
    if was_training:
        model.train()
    mean_loss = loss_sum / max(1, len(samples))
    return mean_loss, aggregate_rows(rows)


def train(net_cfg: NetworkConfig, lw: LossWeights, tc: TrainConfig,
          data_root, out_dir) -> TrainResult:
    """Run the full training loop on the dataset under data_root."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)

    train_samples = load_dataset(data_root, "train", tc.val_fraction, tc.seed)
    val_samples = (
        load_dataset(data_root, "val", tc.val_fraction, tc.seed)
        if tc.val_fraction > 0.0
        else []
    )
    tensors = prepare_tensors(train_samples, net_cfg.input_size)
    monitor_tensors = (
        prepare_tensors(val_samples, net_cfg.input_size) if val_samples else tensors
    )

    model = build_model(net_cfg)
    encoder_params = list(model.encoder.parameters())
    encoder_ids = {id(p) for p in encoder_params}
    head_params = [p for p in model.parameters() if id(p) not in encoder_ids]
    optimizer = torch.optim.AdamW(
        [
            {"params": encoder_params, "lr": tc.lr_encoder},
            {"params": head_params, "lr": tc.lr_head},
        ],
        lr=tc.lr_head,
        weight_decay=tc.weight_decay,
    )
    scheduler = torch.optim.lr_scheduler.ReduceLROnPlateau(
        optimizer,
        mode="min",
        factor=tc.plateau_factor,
        patience=tc.plateau_patience,
        min_lr=tc.lr_min,
    )

    log_path = out / "train_log.csv"
    ckpt_path = out / "checkpoint.ckpt"
    best = math.inf
    best_ckpt = None
    step = 0
    history = []
    model.train()
    with open(log_path, "w", encoding="utf-8") as log:
        log.write(LOG_COLUMNS + "\n")
        for epoch in range(1, tc.epochs + 1):
            order = rng.permutation(len(tensors))
            flips = (
                rng.random(len(tensors)) < 0.5
                if tc.augment
                else np.zeros(len(tensors), dtype=bool)
            )
            for start in range(0, len(order), tc.batch_size):
                idx = order[start:start + tc.batch_size]
                parts = [tensors[i] for i in idx]
                flip = flips[start:start + tc.batch_size]
                x = torch.stack(
                    [t[0].flip(-1) if f else t[0] for t, f in zip(parts, flip)]
                )
                m = torch.stack(
                    [t[1].flip(-1) if f else t[1] for t, f in zip(parts, flip)]
                )
                e = torch.stack(
                    [t[2].flip(-1) if f else t[2] for t, f in zip(parts, flip)]
                )
                outputs = model(x)
                lb = total_loss(outputs.decode, outputs.edge, m, e, lw)
                if not torch.isfinite(lb.total):
                    raise NonFiniteLossError(
                        f"loss became non-finite at step {step} (epoch {epoch}): "
                        f"{lb.values()}"
                    )
                optimizer.zero_grad(set_to_none=True)
                lb.total.backward()
                grads = [p.grad for p in model.parameters() if p.grad is not None]
                clip_global_norm(grads, tc.grad_clip_norm)
                optimizer.step()
                step += 1
                seg = [0.0] * (3 - len(lb.seg)) + [float(s.detach()) for s in lb.seg]
                log.write(
                    f"{step},{epoch},{float(lb.total.detach()):.8f},"
                    f"{seg[0]:.8f},{seg[1]:.8f},{seg[2]:.8f},"
                    f"{float(lb.edge.detach()):.8f},"
                    f"{optimizer.param_groups[1]['lr']:.8g}\n"
                )
            val_loss = _monitor_loss(model, monitor_tensors, lw, tc.batch_size)
            scheduler.step(val_loss)
            history.append({"epoch": epoch, "val_loss": val_loss})
            if val_loss < best:
                best = val_loss
                best_ckpt = model_to_checkpoint(model, tc, optimizer, epoch, best)
                best_ckpt.save(ckpt_path)
    if best_ckpt is None:
        raise NonFiniteLossError("training produced no finite validation loss")
    return TrainResult(
        model=model,
        checkpoint=best_ckpt,
        checkpoint_path=ckpt_path,
        log_path=log_path,
        best_val=best,
        steps=step,
        history=history,
    )
