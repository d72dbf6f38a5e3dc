"""Procedural synthetic camouflage dataset.

Each image is a band-limited random texture; objects are unions of random
ellipses, morphologically smoothed, filled with an independent draw from the
same texture family whose mean intensity is shifted by ``contrast_delta``.
At delta 0 the object differs from the background only by its texture seam;
at delta 1 the foreground saturates, guaranteeing a large intensity gap.
Output: ``out/images``, ``out/masks``, ``out/edges`` as PNGs, reproducible
bitwise for a given config.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .data import make_edge_map
from .errors import ConfigError

# Background texture intensity band; keeping it below 0.5 guarantees the
# documented mean-contrast gap at contrast_delta = 1.
_TEX_BASE = 0.35
_TEX_AMPLITUDE = 0.15
_TINT = 0.03


@dataclass
class SynthConfig:
    num_images: int = 8
    image_size: int = 128
    objects_per_image: tuple[int, int] = (1, 3)
    contrast_delta: float = 0.3
    texture_scale: float = 0.0625
    seed: int = 0

    def __post_init__(self):
        if self.num_images < 1:
            raise ConfigError("num_images must be >= 1")
        if self.image_size < 32:
            raise ConfigError("image_size must be >= 32")
        lo, hi = self.objects_per_image
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad objects_per_image range {self.objects_per_image}")
        if not 0.0 <= self.contrast_delta <= 1.0:
            raise ConfigError("contrast_delta must lie in [0, 1]")
        if not 0.0 < self.texture_scale <= 1.0:
            raise ConfigError("texture_scale must lie in (0, 1]")


def _texture(rng: np.random.Generator, size: int, scale: float) -> np.ndarray:
    """Band-limited field in [_TEX_BASE +- _TEX_AMPLITUDE], zero-mean centered."""
    n = max(2, round(size * scale))
    coarse = rng.standard_normal((n, n))
    field = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_LINEAR)
    field = field - field.mean()
    peak = np.abs(field).max()
    if peak > 0:
        field = field / peak
    return _TEX_BASE + _TEX_AMPLITUDE * field


def _texture_rgb(rng: np.random.Generator, size: int, scale: float) -> np.ndarray:
    base = _texture(rng, size, scale)
    tint = rng.uniform(-_TINT, _TINT, size=3)
    return np.clip(base[:, :, None] + tint[None, None, :], 0.0, 1.0)


def _blob(rng: np.random.Generator, size: int) -> np.ndarray:
    """Union of 2-4 random ellipses around a common center, smoothed."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.2 * size, 0.8 * size, size=2)
    mask = np.zeros((size, size), bool)
    for _ in range(rng.integers(2, 5)):
        jy = cy + rng.uniform(-0.05, 0.05) * size
        jx = cx + rng.uniform(-0.05, 0.05) * size
        a = rng.uniform(0.06, 0.18) * size
        b = rng.uniform(0.06, 0.18) * size
        theta = rng.uniform(0.0, np.pi)
        dy, dx = yy - jy, xx - jx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        mask |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
    mask = ndimage.binary_closing(mask, structure=np.ones((5, 5), bool))
    return ndimage.binary_fill_holes(mask)


def generate_sample(rng: np.random.Generator, cfg: SynthConfig):
    """One (image, mask) pair as (H, W, 3) uint8 and (H, W) uint8 {0, 1}."""
    size = cfg.image_size
    background = _texture_rgb(rng, size, cfg.texture_scale)
    foreground = np.clip(
        _texture_rgb(rng, size, cfg.texture_scale) + cfg.contrast_delta, 0.0, 1.0
    )
    mask = np.zeros((size, size), bool)
    lo, hi = cfg.objects_per_image
    for _ in range(rng.integers(lo, hi + 1)):
        mask |= _blob(rng, size)
    composed = np.where(mask[:, :, None], foreground, background)
    image = np.rint(composed * 255.0).astype(np.uint8)
    return image, mask.astype(np.uint8)


def synthesize(cfg: SynthConfig, out_dir) -> list[str]:
    """Write the dataset under out_dir; returns the generated sample ids."""
    out = Path(out_dir)
    for sub in ("images", "masks", "edges"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    ids = []
    for i in range(cfg.num_images):
        image, mask = generate_sample(rng, cfg)
        stem = f"synth_{i:04d}"
        cv2.imwrite(str(out / "images" / f"{stem}.png"),
                    cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
        cv2.imwrite(str(out / "masks" / f"{stem}.png"), mask * 255)
        cv2.imwrite(str(out / "edges" / f"{stem}.png"), make_edge_map(mask) * 255)
        ids.append(stem)
    return ids
