"""Analytic emissive scenes and ground-truth thermal datasets rendered from them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import DatasetBundle
from .geometry import Intrinsics, Pose, SceneBox, look_at, se3_exp
from .render import SamplingConfig, composite, render_pixels
from .thermal_image import ThermalImage


@dataclass(frozen=True)
class Primitive:
    kind: str  # "sphere" (size = radius) or "box" (size = half extents)
    center: tuple
    size: tuple | float
    amplitude: float
    thermal: float
    smoothing: float = 0.05

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        p = x - np.asarray(self.center, dtype=np.float64)
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=-1) - float(self.size)
        if self.kind == "box":
            q = np.abs(p) - np.asarray(self.size, dtype=np.float64)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(axis=-1), 0.0)
        raise ValueError(f"unknown primitive kind {self.kind!r}")

    def extent(self) -> float:
        half = np.max(self.size) if self.kind == "box" else float(self.size)
        return float(np.linalg.norm(np.broadcast_to(half, 3)) if self.kind == "box" else half)


def occupancy(signed_distance, smoothing: float) -> np.ndarray:
    """1 inside, 0 outside, cubic smoothstep across ``|s| < smoothing``."""
    u = np.clip((np.asarray(signed_distance) + smoothing) / (2.0 * smoothing), 0.0, 1.0)
    return 1.0 - u * u * (3.0 - 2.0 * u)


@dataclass
class AnalyticScene:
    primitives: list[Primitive]
    box: SceneBox = field(default_factory=lambda: SceneBox(np.full(3, -1.0), np.full(3, 1.0)))

    def __post_init__(self):
        for prim in self.primitives:
            if not 0 <= prim.thermal <= 1:
                raise ValueError(f"thermal value {prim.thermal} outside [0, 1]")
            c = np.asarray(prim.center)
            reach = np.asarray(prim.size if prim.kind == "box" else np.full(3, prim.size)) + prim.smoothing
            if np.any(c - reach < self.box.min_corner) or np.any(c + reach > self.box.max_corner):
                raise ValueError(f"primitive at {prim.center} leaves the scene box")


def scene_eval(scene: AnalyticScene, x) -> tuple[np.ndarray, np.ndarray]:
    """Thermal value and density at points ``x`` (..., 3).

    Density sums each primitive's amplitude times its occupancy; thermal is the
    density-weighted mean of primitive thermal values (0 in empty space).
    """
    x = np.asarray(x, dtype=np.float64)
    density = np.zeros(x.shape[:-1])
    heat = np.zeros(x.shape[:-1])
    for prim in scene.primitives:
        part = prim.amplitude * occupancy(prim.signed_distance(x), prim.smoothing)
        density += part
        heat += part * prim.thermal
    thermal = np.divide(heat, density, out=np.zeros_like(heat), where=density > 0)
    return thermal, density


def blobs_scene() -> AnalyticScene:
    """Two hot spheres and a warm slab."""
    return AnalyticScene(
        [
            Primitive("sphere", (0.35, 0.25, 0.1), 0.3, 12.0, 0.95, 0.08),
            Primitive("sphere", (-0.4, -0.2, 0.25), 0.22, 12.0, 0.8, 0.08),
            Primitive("box", (0.0, -0.1, -0.35), (0.45, 0.3, 0.12), 12.0, 0.45, 0.06),
        ]
    )


PRESETS = {"blobs": blobs_scene}


def orbit_poses(count: int, radius: float, height: float, look_at_point=(0.0, 0.0, 0.0), phase: float = 0.0) -> list[Pose]:
    """Cameras evenly spaced on a z-up circle, all looking at ``look_at_point``."""
    if count < 1:
        raise ValueError("orbit needs at least one camera")
    target = np.asarray(look_at_point, dtype=np.float64)
    poses = []
    for k in range(count):
        az = phase + 2.0 * np.pi * k / count
        pos = target + np.array([radius * np.cos(az), radius * np.sin(az), height])
        poses.append(look_at(pos, target))
    return poses


def scene_ray_fn(scene: AnalyticScene):
    """Ray renderer over the analytic scene for :func:`render_pixels`."""

    def ray_fn(o, d, h, delta):
        t, sigma = scene_eval(scene, o[:, None, :] + h[..., None] * d[:, None, :])
        return composite(t, sigma, delta)[0]

    return ray_fn


def render_scene_image(scene, pose: Pose, intr: Intrinsics, near, far, samples: int, workers: int = 1) -> ThermalImage:
    cfg = SamplingConfig(samples, stratified=False)
    return render_pixels(scene_ray_fn(scene), pose, intr, near, far, cfg, workers=workers)


def render_ground_truth(
    scene: AnalyticScene,
    poses: list[Pose],
    intrinsics: Intrinsics,
    samples: int = 256,
    near: float = 0.5,
    far: float = 4.0,
    splits: list[str] | None = None,
) -> DatasetBundle:
    """Images rendered with the training quadrature at a high sample count."""
    if samples < 256:
        raise ValueError("ground truth needs >= 256 samples per ray")
    images = [render_scene_image(scene, p, intrinsics, near, far, samples) for p in poses]
    meta = {"k": 1.0, "b": 0.0, "t_min": 0.0, "t_max": 1.0, "synthetic": True}
    return DatasetBundle(images, list(poses), intrinsics, scene.box, near, far, meta, splits or [])


def perturb_poses(poses: list[Pose], rot_deg: float, trans_frac: float, seed: int, diameter: float) -> list[Pose]:
    """Compose each pose (camera side) with random noise of exact magnitude.

    Rotation noise has a uniformly random axis and an angle of exactly
    ``rot_deg``; the camera centre moves by ``trans_frac * diameter`` in a
    uniformly random direction.
    """
    if rot_deg < 0 or trans_frac < 0:
        raise ValueError("perturbation magnitudes must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for pose in poses:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        step = rng.normal(size=3)
        step /= np.linalg.norm(step)
        noise = se3_exp(np.r_[np.radians(rot_deg) * axis, 0.0, 0.0, 0.0])
        rotated = pose @ noise
        out.append(Pose(rotated.rotation, pose.translation + trans_frac * diameter * step))
    return out


def default_intrinsics(res: int) -> Intrinsics:
    return Intrinsics(fx=float(res), fy=float(res), cx=res / 2.0, cy=res / 2.0, width=res, height=res)


def make_fixture(
    preset: str = "blobs",
    views: int = 24,
    res: int = 64,
    test_views: int = 4,
    samples: int = 256,
    radius: float = 2.6,
    height: float = 1.0,
    near: float = 0.5,
    far: float = 4.0,
) -> DatasetBundle:
    """Orbit dataset: ``views`` training cameras plus held-out cameras between them."""
    scene = PRESETS[preset]()
    intr = default_intrinsics(res)
    poses = orbit_poses(views, radius, height)
    splits = ["train"] * views
    if test_views:
        poses += orbit_poses(test_views, radius, 0.8 * height, phase=np.pi / views)
        splits += ["test"] * test_views
    return render_ground_truth(scene, poses, intr, samples, near, far, splits)
