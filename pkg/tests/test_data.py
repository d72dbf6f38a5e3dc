import os
import time

import cv2
import numpy as np
import pytest
from scipy import ndimage

from camoseg import (
    DataLayoutError,
    ShapeMismatchError,
    denormalize,
    load_dataset,
    make_edge_map,
    preprocess,
    split_stems,
)
from conftest import make_dataset


# ----------------------------------------------------------------- preprocess

def test_preprocess_shape_and_dtype():
    img = np.random.default_rng(0).integers(0, 256, (40, 60, 3), dtype=np.uint8)
    out = preprocess(img, 64)
    assert out.shape == (3, 64, 64)
    assert out.dtype == np.float32


def test_preprocess_constant_values():
    white = np.full((32, 32, 3), 255, dtype=np.uint8)
    out = preprocess(white, 32)
    assert abs(out[0, 0, 0] - (1.0 - 0.485) / 0.229) < 1e-4  # ~2.2489
    assert abs(out[0, 0, 0] - 2.2489) < 1e-4
    black = np.zeros((32, 32, 3), dtype=np.uint8)
    out0 = preprocess(black, 32)
    assert abs(out0[0, 0, 0] - (0.0 - 0.485) / 0.229) < 1e-4  # ~-2.1179
    # red value 255*0.485 lands on the channel mean; uint8 quantizes 123.675
    # to 124, leaving (124/255 - 0.485) / 0.229 ~= 0.0056
    mid = np.zeros((32, 32, 3), dtype=np.uint8)
    mid[..., 0] = round(255 * 0.485)
    outm = preprocess(mid, 32)
    assert abs(outm[0].mean()) < 6e-3


def test_preprocess_round_trip():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
    out = preprocess(img, 64)  # same size: resize is identity
    back = denormalize(out)
    assert np.abs(back - img.astype(np.float32) / 255.0).max() < 1e-6


def test_preprocess_rejects_bad_input():
    with pytest.raises(ShapeMismatchError):
        preprocess(np.zeros((32, 32), dtype=np.uint8), 32)
    with pytest.raises(ShapeMismatchError):
        preprocess(np.zeros((32, 32, 4), dtype=np.uint8), 32)
    with pytest.raises(ShapeMismatchError):
        preprocess(np.zeros((32, 32, 3), dtype=np.uint8), 0)


# ----------------------------------------------------------------- edge maps

def test_edge_map_trivial_masks():
    assert make_edge_map(np.zeros((16, 16), dtype=np.uint8)).sum() == 0
    # all-one mask: object cut off by the frame keeps its border band
    band = make_edge_map(np.ones((16, 16), dtype=np.uint8))
    assert band[0].all() and band[-1].all() and band[:, 0].all() and band[:, -1].all()
    assert band[5:11, 5:11].sum() == 0  # interior clean (radius 2 band)


def test_edge_map_matches_distance_oracle():
    # centered 20x20 square in 64x64; band == pixels within 2 of the
    # morphological inner boundary
    mask = np.zeros((64, 64), dtype=np.uint8)
    mask[22:42, 22:42] = 1
    band = make_edge_map(mask, width=5)
    fg = mask > 0
    eroded = ndimage.binary_erosion(fg, structure=np.ones((3, 3), bool), border_value=0)
    boundary = fg & ~eroded
    dist = ndimage.distance_transform_edt(~boundary)
    want = dist <= 2.0
    assert np.array_equal(band.astype(bool), want)


def test_edge_map_containment_property():
    rng = np.random.default_rng(2)
    for _ in range(5):
        mask = (rng.random((32, 32)) > 0.7).astype(np.uint8)
        mask = ndimage.binary_closing(mask, np.ones((3, 3))).astype(np.uint8)
        band = make_edge_map(mask, width=5)
        fg = mask > 0
        eroded = ndimage.binary_erosion(fg, np.ones((3, 3), bool), border_value=0)
        boundary = fg & ~eroded
        # band contains the boundary...
        assert (band[boundary] == 1).all()
        # ...and stays within ceil(width/2) of it
        if boundary.any():
            dist = ndimage.distance_transform_edt(~boundary)
            assert dist[band.astype(bool)].max() <= 3.0


def test_edge_map_width_one_is_bare_boundary():
    mask = np.zeros((16, 16), dtype=np.uint8)
    mask[4:12, 4:12] = 1
    thin = make_edge_map(mask, width=1)
    fg = mask > 0
    eroded = ndimage.binary_erosion(fg, np.ones((3, 3), bool), border_value=0)
    assert np.array_equal(thin.astype(bool), fg & ~eroded)


def test_edge_map_validates():
    with pytest.raises(ShapeMismatchError):
        make_edge_map(np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(ShapeMismatchError):
        make_edge_map(np.zeros((4, 4), dtype=np.uint8), width=0)


# ----------------------------------------------------------------- splits

def test_split_sizes_and_determinism():
    stems = [f"s{i:03d}" for i in range(100)]
    train = split_stems(stems, "train", 0.10, seed=4)
    val = split_stems(stems, "val", 0.10, seed=4)
    assert len(train) == 90 and len(val) == 10
    assert sorted(train + val) == sorted(stems)
    assert split_stems(stems, "train", 0.10, seed=4) == train
    assert split_stems(stems, "train", 0.10, seed=5) != train
    assert split_stems(stems, "test", 0.10, seed=4) == sorted(stems)


def test_split_rounding_favors_train():
    stems = [f"s{i}" for i in range(10)]
    assert len(split_stems(stems, "train", 0.25, seed=0)) == 8  # ceil(7.5)
    assert len(split_stems(stems, "val", 0.25, seed=0)) == 2


def test_split_unknown_name():
    with pytest.raises(DataLayoutError):
        split_stems(["a"], "dev", 0.1, 0)


# ----------------------------------------------------------------- loading

def test_load_dataset_round_trip(tmp_path):
    make_dataset(tmp_path, n=6, size=64)
    train = load_dataset(tmp_path, "train", val_fraction=0.10, seed=0)
    val = load_dataset(tmp_path, "val", val_fraction=0.10, seed=0)
    assert len(train) == 6 and len(val) == 0  # ceil(0.9*6) = 6
    train2 = load_dataset(tmp_path, "train", val_fraction=0.5, seed=0)
    val2 = load_dataset(tmp_path, "val", val_fraction=0.5, seed=0)
    assert len(train2) == 3 and len(val2) == 3
    sample = train[0]
    assert sample.image.shape == (64, 64, 3)
    assert sample.mask.shape == (64, 64)
    assert set(np.unique(sample.mask)) <= {0, 1}
    assert set(np.unique(sample.edge)) <= {0, 1}


def test_load_dataset_deterministic(tmp_path):
    make_dataset(tmp_path, n=5, size=64)
    a = [s.id for s in load_dataset(tmp_path, "train", 0.4, seed=3)]
    b = [s.id for s in load_dataset(tmp_path, "train", 0.4, seed=3)]
    assert a == b


def test_load_dataset_unmatched_names(tmp_path):
    make_dataset(tmp_path, n=3, size=64)
    extra = tmp_path / "images" / "orphan.png"
    cv2.imwrite(str(extra), np.zeros((8, 8, 3), dtype=np.uint8))
    with pytest.raises(DataLayoutError) as info:
        load_dataset(tmp_path, "train")
    assert "orphan" in info.value.unmatched
    extra.unlink()
    (tmp_path / "masks" / "widow.png").write_bytes(
        cv2.imencode(".png", np.zeros((8, 8), dtype=np.uint8))[1].tobytes()
    )
    with pytest.raises(DataLayoutError) as info:
        load_dataset(tmp_path, "train")
    assert "widow" in info.value.unmatched


def test_load_dataset_empty_root(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    with pytest.raises(DataLayoutError):
        load_dataset(tmp_path, "train")


def test_load_dataset_dimension_mismatch(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    cv2.imwrite(str(tmp_path / "images" / "x.png"), np.zeros((16, 16, 3), np.uint8))
    cv2.imwrite(str(tmp_path / "masks" / "x.png"), np.zeros((8, 8), np.uint8))
    with pytest.raises(DataLayoutError):
        load_dataset(tmp_path, "train")


def test_edge_cache_created_and_refreshed(tmp_path):
    make_dataset(tmp_path, n=2, size=64)
    edges = tmp_path / "edges"
    # synthesize already wrote the edge files; loading keeps them
    load_dataset(tmp_path, "test")
    stamps = {p.name: p.stat().st_mtime_ns for p in edges.iterdir()}
    load_dataset(tmp_path, "test")
    assert {p.name: p.stat().st_mtime_ns for p in edges.iterdir()} == stamps

    # touching a mask invalidates its cached edge map
    mask_path = tmp_path / "masks" / "synth_0000.png"
    future = time.time() + 5
    os.utime(mask_path, (future, future))
    load_dataset(tmp_path, "test")
    fresh = {p.name: p.stat().st_mtime_ns for p in edges.iterdir()}
    assert fresh["synth_0000.png"] != stamps["synth_0000.png"]
    assert fresh["synth_0001.png"] == stamps["synth_0001.png"]


def test_cached_edges_match_recomputation(tmp_path):
    make_dataset(tmp_path, n=2, size=64)
    for sample in load_dataset(tmp_path, "test"):
        assert np.array_equal(sample.edge, make_edge_map(sample.mask))
