"""Synthetic scenes with analytically consistent depth and surface normals.

Geometry is orthographic: pixel (row v, column u) looks along +Z from
``X = (u + 0.5 - W/2) * pixel_size``, ``Y = (v + 0.5 - H/2) * pixel_size``.
A scene is a tilted background plane ``Z = z0 + a X + b Y`` plus 1-3
fronto-parallel boxes whose front faces sit closer to the camera. The depth
map takes the nearest surface per pixel and the normal map holds that
surface's exact normal, oriented toward the camera (negative Z).

Randomness: scene ``k`` of stream ``seed`` draws from a Philox generator
keyed by ``SeedSequence([seed, k])``, so any scene can be regenerated
independently of the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from transdepth.errors import DimensionError

SCENE_WIDTH_M = 4.0
NOISE_STD = 0.01
AMBIENT = 0.3


@dataclass
class Box:
    row0: int
    row1: int
    col0: int
    col1: int
    depth: float
    albedo: tuple[float, float, float]


@dataclass
class SynthScene:
    image: np.ndarray  # 3 x H x W in [0, 1]
    depth: np.ndarray  # 1 x H x W meters
    normals: np.ndarray  # 3 x H x W unit vectors
    pixel_size: float
    plane: tuple[float, float, float]  # z0, a, b
    boxes: list[Box] = field(default_factory=list)

    @property
    def mask(self) -> np.ndarray:
        return np.ones(self.depth.shape, dtype=bool)


def scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def pixel_grid(h: int, w: int, pixel_size: float) -> tuple[np.ndarray, np.ndarray]:
    xs = (np.arange(w) + 0.5 - w / 2) * pixel_size
    ys = (np.arange(h) + 0.5 - h / 2) * pixel_size
    return np.meshgrid(xs, ys)


def make_scene(rng: np.random.Generator, h: int, w: int) -> SynthScene:
    pixel_size = SCENE_WIDTH_M / w
    X, Y = pixel_grid(h, w, pixel_size)
    z0 = rng.uniform(3.0, 6.0)
    a, b = rng.uniform(-0.5, 0.5, size=2)
    plane_depth = z0 + a * X + b * Y
    plane_normal = np.array([a, b, -1.0]) / np.sqrt(a * a + b * b + 1.0)

    depth = plane_depth.copy()
    normals = np.broadcast_to(plane_normal[:, None, None], (3, h, w)).copy()
    albedo = np.broadcast_to(rng.uniform(0.4, 0.9, size=3)[:, None, None], (3, h, w)).copy()

    boxes = []
    for _ in range(int(rng.integers(1, 4))):
        bh = int(rng.integers(h // 5, h // 2 + 1))
        bw = int(rng.integers(w // 5, w // 2 + 1))
        r0 = int(rng.integers(0, h - bh + 1))
        c0 = int(rng.integers(0, w - bw + 1))
        region = (slice(r0, r0 + bh), slice(c0, c0 + bw))
        front = float(plane_depth[region].min() * rng.uniform(0.78, 0.92))
        color = tuple(float(c) for c in rng.uniform(0.2, 1.0, size=3))
        boxes.append(Box(r0, r0 + bh, c0, c0 + bw, front, color))
        nearer = np.zeros((h, w), dtype=bool)
        nearer[region] = depth[region] > front
        depth[nearer] = front
        normals[:, nearer] = np.array([0.0, 0.0, -1.0])[:, None]
        albedo[:, nearer] = np.array(color)[:, None]

    light = np.array([-0.4, -0.5, -1.0])
    light /= np.linalg.norm(light)
    lambert = np.clip(np.tensordot(light, normals, axes=1), 0.0, None)
    attenuation = np.exp(-(depth - 1.0) / 8.0)
    image = albedo * (AMBIENT + (1.0 - AMBIENT) * lambert) * attenuation
    image = np.clip(image + rng.normal(0.0, NOISE_STD, size=image.shape), 0.0, 1.0)
    return SynthScene(image, depth[None], normals, pixel_size, (float(z0), float(a), float(b)), boxes)


def synth_generate(seed: int, n: int, h: int, w: int, start: int = 0) -> list[SynthScene]:
    """Scenes ``start .. start+n-1`` of the stream for ``seed``."""
    if h < 32 or w < 32 or h % 32 or w % 32:
        raise DimensionError(f"scene size {h}x{w} must be a positive multiple of 32")
    return [make_scene(scene_rng(seed, k), h, w) for k in range(start, start + n)]


def finite_difference_normals(depth: np.ndarray, pixel_size: float) -> np.ndarray:
    """Camera-facing normals from central differences of an ``H x W`` orthographic depth map."""
    dz_dy, dz_dx = np.gradient(depth, pixel_size)
    n = np.stack([dz_dx, dz_dy, -np.ones_like(depth)])
    return n / np.linalg.norm(n, axis=0, keepdims=True)
