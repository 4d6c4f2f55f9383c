"""Datasets: in-memory arrays, synthetic scenes on disk, and directory ingestion.

Directory layout (shared by ``synth`` output and real data)::

    image_0000.png    8-bit RGB
    depth_0000.png    16-bit grayscale, meters * 256, 0 = invalid   (kitti_png16)
    depth_0000.npy    float meters, 0 = invalid                      (npy_like_raw)
    normal_0000.npy   optional float32 3 x H x W unit normals
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from transdepth.errors import DimensionError, FormatError, IngestionError
from transdepth.synth import SynthScene, synth_generate

KITTI_SCALE = 256.0


@dataclass
class Dataset:
    images: np.ndarray  # N x 3 x H x W
    depth: np.ndarray  # N x 1 x H x W, 0 where invalid
    mask: np.ndarray  # N x 1 x H x W bool
    normals: np.ndarray | None = None  # N x 3 x H x W
    names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return self.images.shape[0]

    def targets(self, task: str) -> np.ndarray:
        if task == "depth":
            return self.depth
        if self.normals is None:
            raise IngestionError("dataset has no surface normals")
        return self.normals

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.images[idx],
            self.depth[idx],
            self.mask[idx],
            None if self.normals is None else self.normals[idx],
            [self.names[i] for i in idx] if self.names else [],
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.images, self.depth, self.mask, self.normals):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def from_scenes(scenes: Sequence[SynthScene]) -> Dataset:
    if not scenes:
        raise IngestionError("no scenes")
    return Dataset(
        images=np.stack([s.image for s in scenes]),
        depth=np.stack([s.depth for s in scenes]),
        mask=np.stack([s.mask for s in scenes]),
        normals=np.stack([s.normals for s in scenes]),
        names=[f"synth_{i:04d}" for i in range(len(scenes))],
    )


# -- PNG I/O -------------------------------------------------------------------


def _open_png(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: cannot decode PNG ({exc})") from None
    return img


def read_rgb_png(path: str | Path) -> np.ndarray:
    """8-bit RGB PNG -> 3 x H x W float in [0, 1]."""
    img = _open_png(Path(path)).convert("RGB")
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


def write_rgb_png(path: str | Path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def read_depth_png(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """16-bit KITTI depth PNG -> (meters H x W, valid mask). Raw 0 marks an invalid pixel."""
    img = _open_png(Path(path))
    if img.mode not in ("I;16", "I;16B", "I;16L", "I"):
        raise FormatError(f"{path}: expected a 16-bit grayscale PNG, got mode {img.mode}")
    raw = np.asarray(img).astype(np.int64)
    if raw.ndim != 2 or raw.min() < 0 or raw.max() > 65535:
        raise FormatError(f"{path}: not a 16-bit single-channel depth map")
    return raw.astype(np.float64) / KITTI_SCALE, raw > 0


def encode_depth_png(meters: np.ndarray) -> np.ndarray:
    raw = np.round(np.asarray(meters, dtype=np.float64) * KITTI_SCALE)
    if raw.min() < 0 or raw.max() > 65535:
        raise DimensionError("depth out of the 16-bit KITTI range [0, 255.996] m")
    return raw.astype(np.uint16)


def write_depth_png(path: str | Path, meters: np.ndarray) -> None:
    Image.fromarray(encode_depth_png(meters)).save(path, format="PNG")


def write_normal_png(path: str | Path, normals: np.ndarray) -> None:
    write_rgb_png(path, (np.asarray(normals) + 1.0) / 2.0)


# -- directories ----------------------------------------------------------------


def save_scenes(scenes: Sequence[SynthScene], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for i, scene in enumerate(scenes):
        stem = f"{i:04d}"
        write_rgb_png(out / f"image_{stem}.png", scene.image)
        write_depth_png(out / f"depth_{stem}.png", scene.depth[0])
        np.save(out / f"normal_{stem}.npy", scene.normals.astype(np.float32))
        written += [out / f"image_{stem}.png", out / f"depth_{stem}.png", out / f"normal_{stem}.npy"]
    return written


def center_crop(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    top = (arr.shape[-2] - h) // 2
    left = (arr.shape[-1] - w) // 2
    return arr[..., top : top + h, left : left + w]


_STEM = re.compile(r"^(image|depth|normal)_(.+)\.(png|npy)$")


def ingest_directory(path: str | Path, convention: str = "kitti_png16") -> Dataset:
    """Load paired ``image_<stem>.png`` / ``depth_<stem>.*`` files, center-cropped to multiples of 32."""
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"{root}: not a directory")
    if convention not in ("kitti_png16", "npy_like_raw"):
        raise IngestionError(f"unknown depth convention {convention!r}")
    depth_ext = "png" if convention == "kitti_png16" else "npy"
    images, depths, normals = {}, {}, {}
    for f in sorted(root.iterdir()):
        m = _STEM.match(f.name)
        if not m:
            continue
        kind, stem, ext = m.groups()
        if kind == "image" and ext == "png":
            images[stem] = f
        elif kind == "depth" and ext == depth_ext:
            depths[stem] = f
        elif kind == "normal" and ext == "npy":
            normals[stem] = f
    unmatched = sorted(set(images) ^ set(depths))
    if unmatched:
        raise IngestionError(f"unpaired image/depth stems in {root}: {', '.join(unmatched)}")
    if not images:
        raise IngestionError(f"{root}: no image/depth pairs found")
    stems = sorted(images)
    with_normals = bool(normals) and set(normals) == set(stems)

    img_list, depth_list, mask_list, normal_list = [], [], [], []
    shape = None
    for stem in stems:
        img = read_rgb_png(images[stem])
        if convention == "kitti_png16":
            meters, valid = read_depth_png(depths[stem])
        else:
            try:
                meters = np.asarray(np.load(depths[stem]), dtype=np.float64)
            except (ValueError, OSError) as exc:
                raise FormatError(f"{depths[stem]}: cannot read ({exc})") from None
            meters = np.squeeze(meters)
            valid = meters > 0
        if meters.shape != img.shape[1:]:
            raise IngestionError(f"{stem}: image {img.shape[1:]} and depth {meters.shape} sizes differ")
        h, w = (img.shape[1] // 32) * 32, (img.shape[2] // 32) * 32
        if h == 0 or w == 0:
            raise IngestionError(f"{stem}: image smaller than 32x32")
        if shape is None:
            shape = (h, w)
        elif shape != (h, w):
            raise IngestionError(f"{stem}: cropped size {(h, w)} differs from {shape}")
        img_list.append(center_crop(img, h, w))
        depth_list.append(center_crop(np.where(valid, meters, 0.0), h, w)[None])
        mask_list.append(center_crop(valid, h, w)[None])
        if with_normals:
            normal_list.append(center_crop(np.asarray(np.load(normals[stem]), dtype=np.float64), h, w))
    return Dataset(
        images=np.stack(img_list),
        depth=np.stack(depth_list),
        mask=np.stack(mask_list),
        normals=np.stack(normal_list) if with_normals else None,
        names=stems,
    )


def synth_dataset(seed: int, n: int, h: int, w: int, start: int = 0) -> Dataset:
    return from_scenes(synth_generate(seed, n, h, w, start=start))
