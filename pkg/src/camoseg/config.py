"""Configuration dataclasses and the flat ``key = value`` config file format.

Keys are dotted: ``model.*`` for :class:`NetworkConfig`, ``loss.*`` for
:class:`LossWeights`, ``train.*`` for :class:`TrainConfig`. Lists are written
as comma-separated values. Lines starting with ``#`` and blank lines are
ignored. Command-line flags override file values; presets fill defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ConfigError

PRESETS = {
    # Desk-scale defaults for CPU-sized runs.
    "desk": {"train.epochs": 30, "train.batch_size": 4},
    # Full-scale recipe (expects a GPU and a real dataset).
    "paper": {"train.epochs": 150, "train.batch_size": 42},
}

# --ablation name -> config overrides
ABLATIONS = {
    "no-ca": {"model.enable_channel_attention": False},
    "no-easpp": {"model.enable_easpp": False},
    "no-edge": {
        "model.enable_edge_guidance": False,
        "model.edge_influence": [0.0, 0.0, 0.0],
    },
    "single-stage": {"model.decoder_stages": 1},
    "flat-encoder": {"model.encoder_mode": "flat"},
}


def _scaled(value: int, scale, what: str) -> int:
    try:
        out = Fraction(value) / Fraction(scale)
    except ZeroDivisionError:
        raise ConfigError("channel_scale must be nonzero") from None
    if out.denominator != 1 or out <= 0:
        raise ConfigError(
            f"{what}={value} divided by channel_scale={scale} is not a positive integer"
        )
    return int(out)


@dataclass
class NetworkConfig:
    """Hyper-parameters defining the segmentation network."""

    base_channels: list[int] = field(default_factory=lambda: [144, 288, 576, 1152])
    channel_scale: float = 1
    context_channels: int = 256
    edge_channels: int = 64
    edge_influence: list[float] = field(default_factory=lambda: [0.20, 0.33, 0.00])
    decoder_channels: list[int] = field(default_factory=lambda: [128, 64, 32])
    enable_channel_attention: bool = True
    enable_easpp: bool = True
    enable_edge_guidance: bool = True
    decoder_stages: int = 3
    encoder_mode: str = "hierarchical"
    input_size: int = 512
    easpp_dilations: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    se_reduction: int = 16
    efe_depth: int = 2
    mask_threshold: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(self.base_channels) != 4:
            raise ConfigError("base_channels must list exactly 4 stage widths")
        if len(self.decoder_channels) != 3:
            raise ConfigError("decoder_channels must list exactly 3 widths")
        if len(self.edge_influence) != 3:
            raise ConfigError("edge_influence must list exactly 3 values")
        for a in self.edge_influence:
            if not 0.0 <= a <= 1.0:
                raise ConfigError(f"edge_influence values must lie in [0, 1], got {a}")
        if self.decoder_stages not in (1, 3):
            raise ConfigError(f"decoder_stages must be 1 or 3, got {self.decoder_stages}")
        if self.encoder_mode not in ("hierarchical", "flat"):
            raise ConfigError(f"unknown encoder_mode {self.encoder_mode!r}")
        if self.input_size % 32 != 0 or self.input_size <= 0:
            raise ConfigError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if not 0.0 < self.mask_threshold < 1.0:
            raise ConfigError(f"mask_threshold must lie strictly in (0, 1), got {self.mask_threshold}")
        if self.efe_depth < 1:
            raise ConfigError("efe_depth must be >= 1")
        # Forces every width to come out integral.
        self.stage_widths()
        self.context_width()
        self.edge_width()
        self.decoder_widths()

    # Effective widths after the uniform channel_scale divisor.
    def stage_widths(self) -> list[int]:
        return [_scaled(c, self.channel_scale, "base_channels") for c in self.base_channels]

    def context_width(self) -> int:
        return _scaled(self.context_channels, self.channel_scale, "context_channels")

    def edge_width(self) -> int:
        return _scaled(self.edge_channels, self.channel_scale, "edge_channels")

    def decoder_widths(self) -> list[int]:
        return [_scaled(c, self.channel_scale, "decoder_channels") for c in self.decoder_channels]

    def metadata(self) -> dict:
        """Implementation choices not captured by the numeric fields."""
        return {
            "encoder_block": "residual conv (3x3 conv-BN-ReLU x2 + skip), 2 per stage",
            "flat_encoder": "stride-16 patch embed, conv positional encoding, "
            "pre-LN self-attention blocks, learned resampling heads",
            "normalization": "BatchNorm2d",
            "upsampling": "bilinear, align_corners=False",
        }


@dataclass
class LossWeights:
    """Coefficients of the training objective."""

    stage_weights: list[float] = field(default_factory=lambda: [0.2, 0.3, 0.5])
    lambda_e: float = 0.75
    lambda_bce: float = 1.25
    lambda_iou: float = 1.0
    lambda_b: float = 2.0
    focal_alpha: float = 0.75
    focal_gamma: float = 2.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if len(self.stage_weights) not in (1, 3):
            raise ConfigError("stage_weights must list 1 or 3 values")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")


@dataclass
class TrainConfig:
    """Optimization schedule. Defaults are the desk-scale recipe."""

    epochs: int = 30
    batch_size: int = 4
    lr_head: float = 1e-4
    lr_encoder: float = 5e-5
    weight_decay: float = 1e-5
    plateau_factor: float = 0.7
    plateau_patience: int = 5
    lr_min: float = 1e-6
    grad_clip_norm: float = 1.0
    seed: int = 0
    val_fraction: float = 0.10
    augment: bool = True
    monitor: str = "val_loss"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if not self.lr_min <= self.lr_encoder <= self.lr_head:
            raise ConfigError(
                f"need lr_min <= lr_encoder <= lr_head, got "
                f"{self.lr_min} / {self.lr_encoder} / {self.lr_head}"
            )
        if self.grad_clip_norm <= 0:
            raise ConfigError("grad_clip_norm must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError("plateau_factor must lie in (0, 1)")


_SECTIONS = {"model": NetworkConfig, "loss": LossWeights, "train": TrainConfig}


def _parse_scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_value(text: str):
    """Parse one right-hand side of a ``key = value`` line."""
    if "," in text:
        return [_parse_scalar(part) for part in text.split(",") if part.strip() != ""]
    return _parse_scalar(text)


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def read_flat_config(path) -> dict:
    """Read a flat config file into a dict of dotted keys -> parsed values."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = parse_value(value)
    return out


def write_flat_config(path, flat: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(flat):
            fh.write(f"{key} = {format_value(flat[key])}\n")


def to_flat(net: NetworkConfig, loss: LossWeights, train: TrainConfig) -> dict:
    """Serialize the three config objects into one flat dotted-key dict."""
    flat = {}
    for prefix, obj in (("model", net), ("loss", loss), ("train", train)):
        for f in dataclasses.fields(obj):
            flat[f"{prefix}.{f.name}"] = getattr(obj, f.name)
    return flat


def from_flat(flat: dict) -> tuple[NetworkConfig, LossWeights, TrainConfig]:
    """Build config objects from a flat dict, erroring on unknown keys."""
    kwargs = {name: {} for name in _SECTIONS}
    known = {
        name: {f.name for f in dataclasses.fields(cls)} for name, cls in _SECTIONS.items()
    }
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if section not in _SECTIONS or name not in known[section]:
            raise ConfigError(f"unknown config key {key!r}")
        kwargs[section][name] = value
    try:
        return (
            NetworkConfig(**kwargs["model"]),
            LossWeights(**kwargs["loss"]),
            TrainConfig(**kwargs["train"]),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
