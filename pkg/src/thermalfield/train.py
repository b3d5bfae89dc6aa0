"""Joint optimization of the thermal field and per-camera pose corrections."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import read_archive, write_archive
from .dataset import DatasetBundle
from .field import EncodingConfig, FieldParams, init_params, params_from_archive
from .geometry import Intrinsics, Pose, SceneBox, camera_directions, se3_exp, se3_exp_derivatives
from .losses import (
    HssimConstants,
    Patch,
    WindowConfig,
    generate_patch,
    hssim,
    patch_like,
    pixel_loss,
    psnr,
    square_patch_shape,
    ssim,
    structural_loss,
)
from .render import SamplingConfig, render_image, render_rays, render_rays_backward, sample_depths


class ConfigError(ValueError):
    """Carries every invalid field so they can be reported at once."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


class TrainingError(FloatingPointError):
    def __init__(self, step: int, term: str, value: float):
        super().__init__(f"non-finite {term} ({value}) at step {step}")
        self.step = step
        self.term = term


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 30000
    batch_rays: int = 4096
    learning_rate: float = 5e-4
    pose_learning_rate: float = 5e-5
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0
    pose_refinement: bool = True
    structural_loss: bool = True
    samples_per_ray: int = 64
    stratified: bool = True
    kernel: int = 4
    stride: int = 4
    c2: float = 9e-4
    hidden_width: int = 64
    hidden_layers: int = 4
    position_frequencies: int = 10
    direction_frequencies: int = 4
    checkpoint_every: int = 1000
    log_every: int = 10
    fold_every: int = 1000
    pose_refine_start: int = 0
    center_pose_corrections: bool = True

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> list[str]:
        out = []
        for name in ("iterations", "seed", "fold_every", "checkpoint_every", "log_every", "pose_refine_start"):
            if getattr(self, name) < 0 or int(getattr(self, name)) != getattr(self, name):
                out.append(f"{name}: must be a non-negative integer")
        for name in ("batch_rays", "samples_per_ray", "hidden_width", "hidden_layers", "kernel", "stride"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                out.append(f"{name}: must be a positive integer")
        for name in ("learning_rate", "pose_learning_rate", "adam_eps", "c2"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                out.append(f"{name}: must be a finite non-negative number")
        if len(self.adam_betas) != 2 or not all(0 <= b < 1 for b in self.adam_betas):
            out.append("adam_betas: need two values in [0, 1)")
        if self.structural_loss and self.batch_rays >= 1:
            side = int(round(np.sqrt(self.batch_rays)))
            if side * side != self.batch_rays or side % self.kernel:
                out.append("batch_rays: structural loss needs a perfect-square batch whose side is a multiple of kernel")
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        """Build from a JSON-like mapping; unknown keys and bad values are all reported together."""
        names = {f.name for f in dataclasses.fields(cls)}
        problems = [f"{k}: unknown key" for k in data if k not in names]
        kwargs = {k: (tuple(v) if k == "adam_betas" else v) for k, v in data.items() if k in names}
        try:
            cfg = cls(**kwargs)
        except ConfigError as exc:
            problems += exc.problems
        except TypeError as exc:
            problems.append(str(exc))
        if problems:
            raise ConfigError(problems)
        return cfg

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    def window(self) -> WindowConfig:
        return WindowConfig(self.kernel, self.stride)

    def encoding(self) -> EncodingConfig:
        return EncodingConfig(self.position_frequencies, self.direction_frequencies, True)


@dataclass
class TrainData:
    images: np.ndarray  # (V, H, W) training targets
    poses: list[Pose]
    intrinsics: Intrinsics
    box: SceneBox
    near: float
    far: float

    @classmethod
    def from_bundle(cls, bundle: DatasetBundle, split: str = "train") -> "TrainData":
        idx = bundle.indices(split)
        if len(idx) < 2:
            raise ValueError("training needs at least 2 images")
        return cls(
            bundle.stack(split),
            [bundle.poses[i] for i in idx],
            bundle.intrinsics,
            bundle.scene_box,
            bundle.near,
            bundle.far,
        )


@dataclass
class AdamMoments:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def like(cls, a: np.ndarray) -> "AdamMoments":
        return cls(np.zeros_like(a), np.zeros_like(a))


def adam_update(param, grad, moments: AdamMoments, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, step: int = 1):
    """One bias-corrected Adam step on ``param`` in place; ``step`` counts from 1."""
    b1, b2 = betas
    moments.m *= b1
    moments.m += (1 - b1) * grad
    moments.v *= b2
    moments.v += (1 - b2) * grad * grad
    m_hat = moments.m / (1 - b1**step)
    v_hat = moments.v / (1 - b2**step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


@dataclass
class TrainState:
    step: int
    params: FieldParams
    base_poses: list[Pose]
    tangents: np.ndarray  # (V, 6)
    moments: dict[str, AdamMoments]
    pose_moments: AdamMoments
    rng: np.random.Generator
    tangent_grads: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.tangent_grads is None:
            self.tangent_grads = np.zeros_like(self.tangents)

    def corrected_poses(self) -> list[Pose]:
        return [se3_exp(xi) @ p for xi, p in zip(self.tangents, self.base_poses)]


def init_state(data: TrainData, config: TrainConfig) -> TrainState:
    params = init_params(config.seed, (config.hidden_width,) * config.hidden_layers, config.encoding())
    tangents = np.zeros((len(data.poses), 6))
    return TrainState(
        step=0,
        params=params,
        base_poses=list(data.poses),
        tangents=tangents,
        moments={k: AdamMoments.like(v) for k, v in params.values.items()},
        pose_moments=AdamMoments.like(tangents),
        rng=np.random.default_rng([config.seed, 1]),
    )


def sample_minibatch(images: np.ndarray, batch_rays: int, rng: np.random.Generator):
    """Uniform i.i.d. pixels over all training images: ``(image, u, v, target)``."""
    n_img, H, W = images.shape
    if n_img == 0 or H * W == 0:
        raise ValueError("empty dataset")
    flat = rng.integers(0, n_img * H * W, size=batch_rays)
    img, rem = np.divmod(flat, H * W)
    v, u = np.divmod(rem, W)
    return img, u, v, images[img, v, u]


def _fold_in(state: TrainState) -> None:
    state.base_poses = state.corrected_poses()
    state.tangents[:] = 0.0


@dataclass
class Minibatch:
    image: np.ndarray  # (B,) training-view index
    u: np.ndarray
    v: np.ndarray
    target: np.ndarray
    jitter: np.ndarray | None  # (B, S) stratification uniforms
    patch: Patch | None  # target values laid out as a stochastic patch


def draw_minibatch(rng: np.random.Generator, data: TrainData, config: TrainConfig) -> Minibatch:
    """All randomness of one step, drawn in a fixed order from ``rng``."""
    img, u, v, target = sample_minibatch(data.images, config.batch_rays, rng)
    jitter = rng.random((len(img), config.samples_per_ray)) if config.stratified else None
    patch = generate_patch(target, square_patch_shape(len(target)), rng) if config.structural_loss else None
    return Minibatch(img, u, v, target, jitter, patch)


def loss_and_gradients(
    params: FieldParams,
    base_poses: list[Pose],
    tangents: np.ndarray,
    data: TrainData,
    config: TrainConfig,
    mb: Minibatch,
    refine: bool,
    step: int = 0,
) -> tuple[dict, np.ndarray | None]:
    """Losses of one minibatch; fills ``params.grads`` and returns the tangent gradient when ``refine``."""
    S = config.samples_per_ray
    h, delta = sample_depths(data.near, data.far, S, mb.jitter)
    h = np.broadcast_to(h, (len(mb.image), S))
    R0 = np.stack([p.R for p in base_poses])
    t0 = np.stack([p.translation for p in base_poses])
    d0 = np.einsum("nij,nj->ni", R0[mb.image], camera_directions(data.intrinsics, mb.u, mb.v))
    d0 /= np.linalg.norm(d0, axis=1, keepdims=True)
    o0 = t0[mb.image]
    if refine:
        derivs = [se3_exp_derivatives(xi) for xi in tangents]
        Rx = np.stack([r[0] for r in derivs])[mb.image]
        tx = np.stack([r[1] for r in derivs])[mb.image]
        origins = np.einsum("nij,nj->ni", Rx, o0) + tx
        dirs = np.einsum("nij,nj->ni", Rx, d0)
    else:
        origins, dirs = o0, d0

    batch = render_rays(params, origins, dirs, h, delta, data.box)
    l_pix, grad = pixel_loss(batch.values, mb.target)
    if not np.isfinite(l_pix):
        raise TrainingError(step, "l_pix", l_pix)
    l_str = 0.0
    if mb.patch is not None:
        pred_patch = patch_like(mb.patch, batch.values)
        l_str, g_str = structural_loss(pred_patch, mb.patch, config.window(), HssimConstants(config.c2))
        if not np.isfinite(l_str):
            raise TrainingError(step, "l_str", l_str)
        grad = grad + g_str

    params.zero_grad()
    ray_grads = render_rays_backward(params, batch, grad, data.box, ray_grads=refine)
    losses = {"l_pix": l_pix, "l_str": l_str, "l_tot": l_pix + l_str}
    if not refine:
        return losses, None
    # o = R o0 + t and d = R d0, so dL/dxi_k = <dR_k, sum do o0^T + dd d0^T> + dt_k . sum do
    d_o, d_d = ray_grads
    n_views = len(base_poses)
    M = np.zeros((n_views, 3, 3))
    np.add.at(M, mb.image, d_o[:, :, None] * o0[:, None, :] + d_d[:, :, None] * d0[:, None, :])
    s = np.zeros((n_views, 3))
    np.add.at(s, mb.image, d_o)
    dR = np.stack([r[2] for r in derivs])
    dt = np.stack([r[3] for r in derivs])
    return losses, np.einsum("vkab,vab->vk", dR, M) + np.einsum("vka,va->vk", dt, s)


def train_step(state: TrainState, data: TrainData, config: TrainConfig) -> dict:
    """One Adam step on a fresh minibatch; returns ``{l_pix, l_str, l_tot}``."""
    step = state.step + 1
    mb = draw_minibatch(state.rng, data, config)
    refine = config.pose_refinement and step > config.pose_refine_start
    losses, tangent_grad = loss_and_gradients(
        state.params, state.base_poses, state.tangents, data, config, mb, refine, step
    )
    params = state.params
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(step, f"gradient of {name}", float("nan"))
    for name, g in params.grads.items():
        adam_update(params.values[name], g, state.moments[name], config.learning_rate, config.adam_betas, config.adam_eps, step)

    state.tangent_grads[:] = 0.0
    if refine:
        if not np.all(np.isfinite(tangent_grad)):
            raise TrainingError(step, "pose gradient", float("nan"))
        state.tangent_grads[:] = tangent_grad
        # pose moments count their own steps so a delayed start is bias-corrected
        adam_update(
            state.tangents, tangent_grad, state.pose_moments,
            config.pose_learning_rate, config.adam_betas, config.adam_eps, step - config.pose_refine_start,
        )
        if config.center_pose_corrections:
            # a shared world-side motion of every camera is a gauge freedom of the
            # joint problem; removing the mean correction pins the reconstruction frame
            state.tangents -= state.tangents.mean(axis=0)
    state.step = step
    if refine and config.fold_every and step % config.fold_every == 0:
        _fold_in(state)
    return losses


def save_checkpoint(path: str | Path, state: TrainState, config: TrainConfig, data: TrainData) -> None:
    arrays = {f"field/{k}": v for k, v in state.params.values.items()}
    arrays |= {f"adam_m/{k}": m.m for k, m in state.moments.items()}
    arrays |= {f"adam_v/{k}": m.v for k, m in state.moments.items()}
    arrays["tangents"] = state.tangents
    arrays["pose_m"] = state.pose_moments.m
    arrays["pose_v"] = state.pose_moments.v
    arrays["base_rotation"] = np.stack([p.rotation for p in state.base_poses])
    arrays["base_translation"] = np.stack([p.translation for p in state.base_poses])
    meta = {
        "step": state.step,
        "field": state.params.config(),
        "config": config.to_dict(),
        "rng": state.rng.bit_generator.state,
        "box": {"min": data.box.min_corner.tolist(), "max": data.box.max_corner.tolist()},
        "near": data.near,
        "far": data.far,
        "intrinsics": data.intrinsics.to_dict(),
    }
    write_archive(path, "checkpoint", meta, arrays)


def load_checkpoint(path: str | Path) -> tuple[TrainState, dict]:
    """Restore a training state; the returned meta holds config, box, near/far."""
    meta, arrays = read_archive(path, "checkpoint")
    field_arrays = {k[6:]: v for k, v in arrays.items() if k.startswith("field/")}
    params = params_from_archive(meta["field"], field_arrays)
    moments = {k: AdamMoments(arrays[f"adam_m/{k}"].copy(), arrays[f"adam_v/{k}"].copy()) for k in params.values}
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    poses = [Pose(q, t) for q, t in zip(arrays["base_rotation"], arrays["base_translation"])]
    state = TrainState(
        step=int(meta["step"]),
        params=params,
        base_poses=poses,
        tangents=arrays["tangents"].copy(),
        moments=moments,
        pose_moments=AdamMoments(arrays["pose_m"].copy(), arrays["pose_v"].copy()),
        rng=rng,
    )
    return state, meta


def checkpoint_box(meta: dict) -> SceneBox:
    return SceneBox(np.array(meta["box"]["min"]), np.array(meta["box"]["max"]))


def fit(
    data: TrainData,
    config: TrainConfig,
    state: TrainState | None = None,
    out_dir: str | Path | None = None,
    log_file=None,
) -> tuple[TrainState, list[dict]]:
    """Run ``train_step`` until ``config.iterations`` total steps have been taken.

    Passing a restored ``state`` resumes from its step. With ``out_dir`` a
    checkpoint is written every ``checkpoint_every`` steps and at the end.
    """
    state = state or init_state(data, config)
    history = []
    start = time.perf_counter()
    ckpt = Path(out_dir) / "checkpoint.tfld" if out_dir is not None else None
    while state.step < config.iterations:
        losses = train_step(state, data, config)
        entry = {"step": state.step, **losses, "elapsed_s": time.perf_counter() - start}
        history.append(entry)
        if log_file is not None and config.log_every and state.step % config.log_every == 0:
            log_file.write(json.dumps(entry) + "\n")
            log_file.flush()
        if ckpt is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
            save_checkpoint(ckpt, state, config, data)
    if ckpt is not None:
        save_checkpoint(ckpt, state, config, data)
    return state, history


def evaluate_views(
    params: FieldParams,
    bundle: DatasetBundle,
    split: str = "test",
    samples: int = 64,
    poses: list[Pose] | None = None,
    workers: int = 1,
) -> dict:
    """Mean PSNR, SSIM and HSSIM of rendered views against their targets, plus per-view scores."""
    idx = bundle.indices(split)
    if not idx:
        raise ValueError(f"no {split!r} views to evaluate")
    cfg = SamplingConfig(samples, stratified=False)
    window = WindowConfig()
    scores = {"psnr": [], "ssim": [], "hssim": []}
    for j, i in enumerate(idx):
        pose = poses[j] if poses is not None else bundle.poses[i]
        pred = render_image(params, pose, bundle.intrinsics, bundle.near, bundle.far, bundle.scene_box, cfg, workers=workers)
        target = bundle.images[i].values
        scores["psnr"].append(psnr(pred.values, target))
        scores["ssim"].append(ssim(pred.values, target, window))
        scores["hssim"].append(hssim(pred.values, target, window)[0])
    per_view = [
        {"name": bundle.names[i], "psnr": scores["psnr"][j], "ssim": scores["ssim"][j], "hssim": scores["hssim"][j]}
        for j, i in enumerate(idx)
    ]
    return {k: float(np.mean(v)) for k, v in scores.items()} | {"views": len(idx), "per_view": per_view}
