import numpy as np
import pytest
from PIL import Image

from transdepth.data import (
    center_crop,
    encode_depth_png,
    from_scenes,
    ingest_directory,
    read_depth_png,
    read_rgb_png,
    save_scenes,
    synth_dataset,
    write_depth_png,
    write_rgb_png,
)
from transdepth.errors import DimensionError, FormatError, IngestionError
from transdepth.synth import synth_generate


def write_raw_depth(path, raw):
    Image.fromarray(np.asarray(raw, dtype=np.uint16)).save(path, format="PNG")


def write_pair(root, stem, h=32, w=32, raw=None):
    write_rgb_png(root / f"image_{stem}.png", np.full((3, h, w), 0.5))
    write_raw_depth(root / f"depth_{stem}.png", np.full((h, w), 512) if raw is None else raw)


def test_kitti_scale(tmp_path):
    raw = np.full((4, 4), 25600)
    raw[0, 0] = 0
    write_raw_depth(tmp_path / "d.png", raw)
    meters, valid = read_depth_png(tmp_path / "d.png")
    assert meters[1, 1] == 100.0
    assert not valid[0, 0] and valid.sum() == 15


def test_depth_png_round_trip(tmp_path):
    meters = np.array([[0.0, 1.0], [2.5, 255.99]])
    write_depth_png(tmp_path / "d.png", meters)
    back, valid = read_depth_png(tmp_path / "d.png")
    assert np.max(np.abs(back - meters)) <= 0.5 / 256
    assert valid.tolist() == [[False, True], [True, True]]
    with pytest.raises(DimensionError):
        encode_depth_png(np.array([300.0]))


def test_rgb_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(3, 5, 7)) / 255.0
    write_rgb_png(tmp_path / "i.png", img)
    assert np.array_equal(read_rgb_png(tmp_path / "i.png"), img)


def test_ingest_pairs_and_masks(tmp_path):
    raw = np.full((40, 70), 512)
    raw[20, 35] = 0
    write_pair(tmp_path, "a", 40, 70, raw)
    write_pair(tmp_path, "b", 40, 70)
    (tmp_path / "notes.txt").write_text("ignored")
    ds = ingest_directory(tmp_path)
    assert len(ds) == 2 and ds.names == ["a", "b"]
    assert ds.images.shape == (2, 3, 32, 64)
    assert ds.depth.shape == ds.mask.shape == (2, 1, 32, 64)
    assert ds.mask[1].all() and ds.mask[0].sum() == 32 * 64 - 1
    assert np.all(ds.depth[ds.mask] == 2.0)
    assert np.all(ds.depth[~ds.mask] == 0.0)
    assert ds.normals is None


def test_unmatched_stems_named(tmp_path):
    write_pair(tmp_path, "0001")
    write_rgb_png(tmp_path / "image_0002.png", np.zeros((3, 32, 32)))
    with pytest.raises(IngestionError, match="0002"):
        ingest_directory(tmp_path)


def test_corrupt_png(tmp_path):
    write_pair(tmp_path, "x")
    (tmp_path / "depth_x.png").write_bytes(b"\x89PNG\r\n\x1a\nnot really")
    with pytest.raises(FormatError):
        ingest_directory(tmp_path)


def test_eight_bit_depth_rejected(tmp_path):
    write_pair(tmp_path, "x")
    Image.fromarray(np.zeros((32, 32), dtype=np.uint8)).save(tmp_path / "depth_x.png")
    with pytest.raises(FormatError):
        ingest_directory(tmp_path)


def test_ingest_errors(tmp_path):
    with pytest.raises(IngestionError):
        ingest_directory(tmp_path / "missing")
    with pytest.raises(IngestionError):
        ingest_directory(tmp_path)
    write_pair(tmp_path, "s", 16, 16)
    with pytest.raises(IngestionError):
        ingest_directory(tmp_path)
    with pytest.raises(IngestionError):
        ingest_directory(tmp_path, "exr")


def test_npy_convention(tmp_path):
    write_rgb_png(tmp_path / "image_0.png", np.zeros((3, 32, 32)))
    depth = np.full((32, 32), 3.25)
    depth[0, 0] = 0.0
    np.save(tmp_path / "depth_0.npy", depth)
    ds = ingest_directory(tmp_path, "npy_like_raw")
    assert ds.depth[0, 0, 1, 1] == 3.25 and not ds.mask[0, 0, 0, 0]


def test_saved_scenes_reingest(tmp_path):
    scenes = synth_generate(2, 3, 32, 32)
    save_scenes(scenes, tmp_path)
    ds = ingest_directory(tmp_path)
    assert len(ds) == 3 and ds.normals is not None
    assert np.max(np.abs(ds.depth - np.stack([s.depth for s in scenes]))) <= 0.5 / 256
    assert np.allclose(ds.normals, np.stack([s.normals for s in scenes]), atol=1e-6)


def test_dataset_helpers():
    ds = synth_dataset(4, 4, 32, 32)
    assert ds.content_hash() == from_scenes(synth_generate(4, 4, 32, 32)).content_hash()
    sub = ds.subset([2, 0])
    assert sub.names == ["synth_0002", "synth_0000"]
    assert np.array_equal(sub.images[1], ds.images[0])
    assert ds.targets("normals") is ds.normals
    assert synth_dataset(4, 2, 32, 32, start=2).content_hash() == ds.subset([2, 3]).content_hash()


def test_targets_without_normals(tmp_path):
    write_pair(tmp_path, "a")
    with pytest.raises(IngestionError):
        ingest_directory(tmp_path).targets("normals")


def test_center_crop():
    arr = np.arange(5 * 6).reshape(1, 5, 6)
    assert np.array_equal(center_crop(arr, 3, 2), arr[:, 1:4, 2:4])
