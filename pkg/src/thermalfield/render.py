"""Discrete volume rendering of thermal values and its reverse-mode derivative.

Each ray's [near, far] interval is split into equal bins. Samples sit at bin
midpoints, or at one uniform draw per bin when stratified. Every sample's
spacing is the bin width. The background contributes zero, and so does
anything outside the scene box.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .field import FieldCache, FieldParams, field_backward, field_forward
from .geometry import Intrinsics, Pose, Ray, SceneBox, contract, pixel_rays
from .mesh import DensityGrid
from .thermal_image import ThermalImage


@dataclass(frozen=True)
class SamplingConfig:
    samples_per_ray: int = 96
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")


def sample_depths(near: float, far: float, n: int, jitter=None) -> tuple[np.ndarray, float]:
    """Sample parameters and the common spacing for rays on [near, far].

    ``jitter`` is None for bin midpoints, or an array (..., n) of uniforms in
    [0, 1) placing one sample inside each bin.
    """
    width = (far - near) / n
    lower = near + width * np.arange(n)
    if jitter is None:
        return lower + 0.5 * width, width
    return lower + width * np.asarray(jitter), width


def ray_jitter(seed: int, ray_ids, n: int) -> np.ndarray:
    """Per-ray uniforms from streams keyed on (seed, ray index)."""
    return np.stack([np.random.default_rng([seed, int(i)]).random(n) for i in np.ravel(ray_ids)])


def sample_ray(ray: Ray, cfg: SamplingConfig, ray_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    jitter = ray_jitter(cfg.seed, [ray_index], cfg.samples_per_ray)[0] if cfg.stratified else None
    h, width = sample_depths(ray.h_near, ray.h_far, cfg.samples_per_ray, jitter)
    return h, np.full(cfg.samples_per_ray, width)


def composite(t, sigma, delta) -> tuple[np.ndarray, np.ndarray]:
    """Rendered value and weights along the last axis.

    ``alpha_i = 1 - exp(-sigma_i delta_i)``, ``T_i = prod_{j<i} (1 - alpha_j)``,
    ``w_i = T_i alpha_i`` and the result is ``sum_i w_i t_i``.
    """
    tau = np.asarray(sigma) * delta
    alpha = -np.expm1(-tau)
    acc = np.cumsum(tau, axis=-1)
    trans = np.exp(-(acc - tau))  # exclusive prefix sum
    weights = trans * alpha
    return (weights * t).sum(axis=-1), weights


def composite_backward(t, sigma, delta, weights, d_value) -> tuple[np.ndarray, np.ndarray]:
    """Partials of the composite with respect to ``t`` and ``sigma``.

    ``dV/dsigma_i = delta_i (t_i T_{i+1} - sum_{k>i} t_k w_k)``.
    """
    t = np.asarray(t)
    tau = np.asarray(sigma) * delta
    d_value = np.asarray(d_value)[..., None]
    trans_next = np.exp(-np.cumsum(tau, axis=-1))
    tw = t * weights
    tail = np.cumsum(tw[..., ::-1], axis=-1)[..., ::-1] - tw  # exclusive suffix sum
    d_t = weights * d_value
    d_sigma = (t * trans_next - tail) * delta * d_value
    return d_t, d_sigma


@dataclass
class RaySampleBatch:
    origins: np.ndarray  # (N, 3)
    directions: np.ndarray  # (N, 3)
    h: np.ndarray  # (N, S)
    delta: float
    thermal: np.ndarray  # (N, S)
    density: np.ndarray  # (N, S)
    weights: np.ndarray  # (N, S)
    values: np.ndarray  # (N,)
    cache: FieldCache
    inside: np.ndarray  # (N, S) samples within the scene box


def inside_box(xc: np.ndarray) -> np.ndarray:
    """Mask of contracted points lying in the canonical box."""
    return np.all(np.abs(xc) <= 1.0, axis=-1)


def render_rays(params: FieldParams, origins, directions, h, delta, box: SceneBox) -> RaySampleBatch:
    x = origins[:, None, :] + h[..., None] * directions[:, None, :]
    xc = contract(x, box)
    out, cache = field_forward(params, xc, directions)
    inside = inside_box(xc)
    density = out.density * inside
    values, weights = composite(out.thermal, density, delta)
    return RaySampleBatch(origins, directions, h, delta, out.thermal, density, weights, values, cache, inside)


def render_rays_backward(
    params: FieldParams, batch: RaySampleBatch, d_values, box: SceneBox, ray_grads: bool = False
):
    """Backpropagate ``d_values`` (N,) into the field parameters.

    With ``ray_grads`` also returns gradients with respect to ray origins and
    directions, holding the sample parameters ``h`` fixed.
    """
    d_t, d_sigma = composite_backward(batch.thermal, batch.density, batch.delta, batch.weights, d_values)
    d_sigma *= batch.inside
    res = field_backward(params, batch.cache, d_t, d_sigma, input_grads=ray_grads)
    if not ray_grads:
        return None
    dxc, dd_field = res
    dx = dxc * box.scale  # contraction is affine per axis
    d_origins = dx.sum(axis=1)
    d_dirs = np.einsum("ns,nsk->nk", batch.h, dx) + dd_field
    return d_origins, d_dirs


def render_pixels(ray_fn, pose: Pose, intrinsics: Intrinsics, near: float, far: float, cfg: SamplingConfig, chunk: int = 2048, workers: int = 1) -> ThermalImage:
    """Render every pixel of one view with ``ray_fn(origins, dirs, h, delta) -> values``.

    Sample positions come from per-ray streams, so ``workers`` never changes the result.
    """
    H, W = intrinsics.height, intrinsics.width
    v, u = np.divmod(np.arange(H * W), W)
    o, d = pixel_rays(intrinsics, pose.R, pose.translation, u, v)
    S = cfg.samples_per_ray
    jobs = []
    for start in range(0, H * W, chunk):
        sl = slice(start, min(start + chunk, H * W))
        jitter = ray_jitter(cfg.seed, np.arange(sl.start, sl.stop), S) if cfg.stratified else None
        h, width = sample_depths(near, far, S, jitter)
        h = np.broadcast_to(h, (sl.stop - sl.start, S))
        jobs.append((o[sl], d[sl], h, width))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda j: ray_fn(*j), jobs))
    else:
        parts = [ray_fn(*j) for j in jobs]
    values = np.clip(np.concatenate(parts), 0.0, 1.0).reshape(H, W)
    return ThermalImage(W, H, values)


def render_image(
    params: FieldParams,
    pose: Pose,
    intrinsics: Intrinsics,
    near: float,
    far: float,
    box: SceneBox,
    cfg: SamplingConfig = SamplingConfig(stratified=False),
    chunk: int = 2048,
    workers: int = 1,
) -> ThermalImage:
    """Render one view of the field; results do not depend on ``workers``."""

    def ray_fn(o, d, h, delta):
        return render_rays(params, o, d, h, delta, box).values

    return render_pixels(ray_fn, pose, intrinsics, near, far, cfg, chunk, workers)


def lattice_points(box: SceneBox, resolution) -> np.ndarray:
    """(nx, ny, nz, 3) regular lattice spanning the box, corners included."""
    res = np.broadcast_to(np.asarray(resolution, dtype=int), (3,))
    if np.any(res < 2):
        raise ValueError("grid resolution must be >= 2 per axis")
    axes = [np.linspace(box.min_corner[i], box.max_corner[i], res[i]) for i in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def render_density_grid(params: FieldParams, box: SceneBox, resolution, chunk: int = 65536) -> DensityGrid:
    pts = lattice_points(box, resolution)
    flat = contract(pts.reshape(-1, 3), box)
    up = np.array([0.0, 0.0, 1.0])
    dens = []
    for start in range(0, len(flat), chunk):
        xs = flat[start : start + chunk]
        out, _ = field_forward(params, xs, np.broadcast_to(up, xs.shape))
        dens.append(out.density[:, 0])
    return DensityGrid(pts.shape[:3], box, np.concatenate(dens).reshape(pts.shape[:3]))


def field_thermal_at(params: FieldParams, points, box: SceneBox) -> np.ndarray:
    """Thermal value at world points averaged over the six axis directions."""
    xs = contract(np.asarray(points, dtype=np.float64).reshape(-1, 3), box)
    total = np.zeros(len(xs))
    for d in np.vstack([np.eye(3), -np.eye(3)]):
        out, _ = field_forward(params, xs, np.broadcast_to(d, xs.shape))
        total += out.thermal[:, 0]
    return total / 6.0
