"""Dataset loading and preprocessing.

Directory layout: ``root/images/*.{jpg,png}``, ``root/masks/*.png``, optional
``root/edges/*.png``. Images and masks pair by basename stem. Missing or
stale edge maps are generated from the masks and cached under ``edges/``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from .errors import DataLayoutError, ShapeMismatchError

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class Sample:
    """One image with its binary mask and edge band, all at native resolution."""

    id: str
    image: np.ndarray  # (H, W, 3) uint8, RGB
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    edge: np.ndarray  # (H, W) uint8 in {0, 1}


def preprocess(image: np.ndarray, size: int) -> np.ndarray:
    """Resize to (size, size), scale to [0, 1], normalize; returns (3, size, size)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatchError(f"expected an (H, W, 3) image, got {image.shape}")
    if size <= 0:
        raise ShapeMismatchError(f"target size must be positive, got {size}")
    resized = cv2.resize(image, (size, size), interpolation=cv2.INTER_LINEAR)
    x = resized.astype(np.float32) / 255.0
    x = (x - IMAGENET_MEAN) / IMAGENET_STD
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def denormalize(x: np.ndarray) -> np.ndarray:
    """Invert the normalization of :func:`preprocess`; returns (H, W, 3) in [0, 1]."""
    return x.transpose(1, 2, 0) * IMAGENET_STD + IMAGENET_MEAN


def _disk(radius: int) -> np.ndarray:
    """Exact Euclidean disk: offsets with dr^2 + dc^2 <= radius^2."""
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def make_edge_map(mask: np.ndarray, width: int = 5) -> np.ndarray:
    """Boundary band of a binary mask with the given total width.

    The band is the set of pixels within (width-1)//2 of the mask's inner
    boundary (foreground pixels adjacent to background; the area outside the
    image counts as background, so objects cut off by the image border keep
    their border response).
    """
    if mask.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-d mask, got shape {mask.shape}")
    if width < 1:
        raise ShapeMismatchError(f"band width must be >= 1, got {width}")
    fg = np.asarray(mask) > 0
    eroded = ndimage.binary_erosion(fg, structure=np.ones((3, 3), bool), border_value=0)
    boundary = fg & ~eroded
    radius = (width - 1) // 2
    if radius > 0:
        boundary = ndimage.binary_dilation(boundary, structure=_disk(radius))
    return boundary.astype(np.uint8)


def _stems(directory: Path, suffixes=IMAGE_SUFFIXES) -> dict:
    found = {}
    if directory.is_dir():
        for path in sorted(directory.iterdir()):
            if path.suffix.lower() in suffixes:
                found[path.stem] = path
    return found


def _read_image(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise DataLayoutError(f"could not read image {path}")
    return cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)


def _read_mask(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise DataLayoutError(f"could not read mask {path}")
    return (raw > 127).astype(np.uint8)


def split_stems(stems: list[str], split: str, val_fraction: float, seed: int) -> list[str]:
    """Deterministic split: shuffle sorted stems, first ceil((1-vf)*N) to train."""
    ordered = sorted(stems)
    if split == "test":
        return ordered
    if split not in ("train", "val"):
        raise DataLayoutError(f"unknown split {split!r}")
    rng = np.random.default_rng(seed)
    shuffled = [ordered[i] for i in rng.permutation(len(ordered))]
    n_train = math.ceil((1.0 - val_fraction) * len(ordered))
    return shuffled[:n_train] if split == "train" else shuffled[n_train:]


def load_dataset(root, split: str, val_fraction: float = 0.10, seed: int = 0) -> list[Sample]:
    """Load the given split as a list of samples in deterministic order."""
    root = Path(root)
    images = _stems(root / "images")
    masks = _stems(root / "masks", suffixes=(".png",))
    missing_masks = sorted(set(images) - set(masks))
    missing_images = sorted(set(masks) - set(images))
    if missing_masks or missing_images:
        raise DataLayoutError(
            f"unmatched basenames under {root}: "
            f"images without masks {missing_masks}, masks without images {missing_images}",
            unmatched=missing_masks + missing_images,
        )
    if not images:
        raise DataLayoutError(f"no samples found under {root}")

    edges_dir = root / "edges"
    samples = []
    for stem in split_stems(list(images), split, val_fraction, seed):
        image = _read_image(images[stem])
        mask = _read_mask(masks[stem])
        if image.shape[:2] != mask.shape:
            raise DataLayoutError(
                f"{stem}: image {image.shape[:2]} and mask {mask.shape} dimensions differ"
            )
        edge_path = edges_dir / f"{stem}.png"
        if edge_path.exists() and edge_path.stat().st_mtime >= masks[stem].stat().st_mtime:
            edge = _read_mask(edge_path)
        else:
            edge = make_edge_map(mask)
            edges_dir.mkdir(parents=True, exist_ok=True)
            cv2.imwrite(str(edge_path), edge * 255)
        samples.append(Sample(id=stem, image=image, mask=mask, edge=edge))
    return samples
