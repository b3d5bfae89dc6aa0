"""Sinusoidally encoded MLP ``(x, d) -> (thermal, density)`` with an exact manual backward pass.

The density head branches off the trunk before view-direction features are
mixed in, so density never depends on ``d``. All math is float64.

Batched inputs use a rays-by-samples layout: positions ``x`` are (N, S, 3) and
directions ``d`` are (N, 3), shared by the S samples of each ray.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import read_archive, write_archive


class FieldFault(FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite parameter in layer {layer!r}")
        self.layer = layer


@dataclass(frozen=True)
class EncodingConfig:
    position_frequencies: int = 10
    direction_frequencies: int = 4
    include_input: bool = True

    def __post_init__(self):
        if self.position_frequencies < 0 or self.direction_frequencies < 0:
            raise ValueError("frequency counts must be >= 0")

    @property
    def position_dim(self) -> int:
        return 3 * (int(self.include_input) + 2 * self.position_frequencies)

    @property
    def direction_dim(self) -> int:
        return 3 * (int(self.include_input) + 2 * self.direction_frequencies)


def _frequencies(n: int) -> np.ndarray:
    return np.pi * 2.0 ** np.arange(n)


def encode(x, frequencies: int, include_input: bool = True) -> np.ndarray:
    """``[x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]``."""
    x = np.asarray(x, dtype=np.float64)
    ang = x[..., None, :] * _frequencies(frequencies)[:, None]  # (..., L, 3)
    feats = np.stack([np.sin(ang), np.cos(ang)], axis=-2).reshape(*x.shape[:-1], 6 * frequencies)
    return np.concatenate([x, feats], axis=-1) if include_input else feats


def encode_backward(x, frequencies: int, include_input: bool, grad) -> np.ndarray:
    """Pull a gradient on the encoded features back onto ``x``."""
    x = np.asarray(x, dtype=np.float64)
    f = _frequencies(frequencies)[:, None]
    ang = x[..., None, :] * f
    off = 3 if include_input else 0
    g = grad[..., off:].reshape(*x.shape[:-1], frequencies, 2, 3)
    dx = (f * (np.cos(ang) * g[..., 0, :] - np.sin(ang) * g[..., 1, :])).sum(axis=-2)
    return dx + grad[..., :3] if include_input else dx


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class FieldParams:
    widths: tuple[int, ...]
    head_width: int
    encoding: EncodingConfig
    values: dict[str, np.ndarray]
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.grads:
            self.grads = {k: np.zeros_like(v) for k, v in self.values.items()}

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "FieldParams":
        return FieldParams(
            self.widths,
            self.head_width,
            self.encoding,
            {k: v.copy() for k, v in self.values.items()},
            {k: g.copy() for k, g in self.grads.items()},
        )

    def check_finite(self) -> None:
        for name, v in self.values.items():
            if not np.all(np.isfinite(v)):
                raise FieldFault(name.rsplit(".", 1)[0])

    @property
    def n_trunk(self) -> int:
        return len(self.widths)

    def config(self) -> dict:
        return {
            "widths": list(self.widths),
            "head_width": self.head_width,
            "encoding": {
                "position_frequencies": self.encoding.position_frequencies,
                "direction_frequencies": self.encoding.direction_frequencies,
                "include_input": self.encoding.include_input,
            },
        }


def layer_shapes(widths, head_width: int, enc: EncodingConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    fan_in = enc.position_dim
    for i, w in enumerate(widths):
        shapes[f"trunk.{i}.weight"] = (fan_in, w)
        shapes[f"trunk.{i}.bias"] = (w,)
        fan_in = w
    shapes["density.weight"] = (fan_in, 1)
    shapes["density.bias"] = (1,)
    shapes["thermal.hidden.weight"] = (fan_in, head_width)
    shapes["thermal.direction.weight"] = (enc.direction_dim, head_width)
    shapes["thermal.hidden.bias"] = (head_width,)
    shapes["thermal.out.weight"] = (head_width, 1)
    shapes["thermal.out.bias"] = (1,)
    return shapes


def init_params(
    seed: int,
    widths=(64, 64, 64, 64),
    encoding: EncodingConfig = EncodingConfig(),
    head_width: int | None = None,
) -> FieldParams:
    """Uniform(+-sqrt(6 / fan_in)) weights, zero biases, deterministic in ``seed``."""
    widths = tuple(int(w) for w in widths)
    if not widths:
        raise ValueError("need at least one hidden layer width")
    head_width = head_width or max(widths[-1] // 2, 1)
    rng = np.random.default_rng(seed)
    values = {}
    shapes = layer_shapes(widths, head_width, encoding)
    for name, shape in shapes.items():
        if name.endswith(".bias"):
            values[name] = np.zeros(shape)
            continue
        fan_in = shape[0]
        if name == "thermal.hidden.weight" or name == "thermal.direction.weight":
            # the two blocks act on one concatenated input
            fan_in = shapes["thermal.hidden.weight"][0] + shapes["thermal.direction.weight"][0]
        bound = np.sqrt(6.0 / fan_in)
        values[name] = rng.uniform(-bound, bound, size=shape)
    return FieldParams(widths, head_width, encoding, values)


@dataclass
class FieldOutput:
    thermal: np.ndarray
    density: np.ndarray


@dataclass
class FieldCache:
    x: np.ndarray
    d: np.ndarray
    hidden: list  # trunk inputs: encoded x, then each post-ReLU activation
    enc_d: np.ndarray
    head: np.ndarray  # post-ReLU thermal hidden layer
    density_pre: np.ndarray
    thermal: np.ndarray
    shape: tuple[int, int]


def _as_batch(x, d):
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, None, :]
    elif x.ndim == 2:
        x = x[:, None, :]
    if d.ndim == 1:
        d = d[None, :]
    if d.shape[0] != x.shape[0]:
        raise ValueError(f"direction batch {d.shape} does not match positions {x.shape}")
    return x, d


def field_forward(params: FieldParams, x, d, cfg: EncodingConfig | None = None):
    """Evaluate the field; returns ``(FieldOutput, FieldCache)``.

    ``x`` may be (3,), (N, 3) (one sample per direction) or (N, S, 3).
    Outputs have shape (N, S).
    """
    cfg = cfg or params.encoding
    params.check_finite()
    x, d = _as_batch(x, d)
    n, s, _ = x.shape
    p = params.values
    h = encode(x.reshape(n * s, 3), cfg.position_frequencies, cfg.include_input)
    hidden = [h]
    for i in range(params.n_trunk):
        z = h @ p[f"trunk.{i}.weight"]
        z += p[f"trunk.{i}.bias"]
        h = np.maximum(z, 0.0, out=z)
        hidden.append(h)
    density_pre = (h @ p["density.weight"])[:, 0] + p["density.bias"][0]
    enc_d = encode(d, cfg.direction_frequencies, cfg.include_input)
    dir_term = enc_d @ p["thermal.direction.weight"]  # per ray
    zt = h @ p["thermal.hidden.weight"]
    zt += p["thermal.hidden.bias"]
    zt = zt.reshape(n, s, -1)
    zt += dir_term[:, None, :]
    head = np.maximum(zt, 0.0, out=zt).reshape(n * s, -1)
    thermal = sigmoid((head @ p["thermal.out.weight"])[:, 0] + p["thermal.out.bias"][0])
    out = FieldOutput(thermal.reshape(n, s), softplus(density_pre).reshape(n, s))
    cache = FieldCache(x, d, hidden, enc_d, head, density_pre, thermal, (n, s))
    return out, cache


def field_backward(params: FieldParams, cache: FieldCache, d_thermal, d_density, input_grads: bool = False):
    """Accumulate ``d(d_thermal . t + d_density . sigma)/dTheta`` into ``params.grads``.

    With ``input_grads`` also returns the gradients with respect to the
    positions (N, S, 3) and directions (N, 3).
    """
    cfg = params.encoding
    p, g = params.values, params.grads
    n, s = cache.shape
    d_t = np.broadcast_to(np.asarray(d_thermal, dtype=np.float64), (n, s)).reshape(-1)
    d_s = np.broadcast_to(np.asarray(d_density, dtype=np.float64), (n, s)).reshape(-1)
    h = cache.hidden[-1]

    dt_pre = (d_t * cache.thermal * (1.0 - cache.thermal))[:, None]
    g["thermal.out.weight"] += cache.head.T @ dt_pre
    g["thermal.out.bias"] += dt_pre.sum()
    dz_head = dt_pre @ p["thermal.out.weight"].T
    dz_head *= cache.head > 0
    g["thermal.hidden.weight"] += h.T @ dz_head
    g["thermal.hidden.bias"] += dz_head.sum(axis=0)
    dz_ray = dz_head.reshape(n, s, -1).sum(axis=1)
    g["thermal.direction.weight"] += cache.enc_d.T @ dz_ray

    ds_pre = (d_s * sigmoid(cache.density_pre))[:, None]
    g["density.weight"] += h.T @ ds_pre
    g["density.bias"] += ds_pre.sum()

    dh = dz_head @ p["thermal.hidden.weight"].T
    dh += ds_pre @ p["density.weight"].T
    for i in reversed(range(params.n_trunk)):
        dh *= cache.hidden[i + 1] > 0
        g[f"trunk.{i}.weight"] += cache.hidden[i].T @ dh
        g[f"trunk.{i}.bias"] += dh.sum(axis=0)
        if i > 0 or input_grads:
            dh = dh @ p[f"trunk.{i}.weight"].T
    if not input_grads:
        return None
    dx = encode_backward(cache.x.reshape(n * s, 3), cfg.position_frequencies, cfg.include_input, dh)
    d_enc_d = dz_ray @ p["thermal.direction.weight"].T
    dd = encode_backward(cache.d, cfg.direction_frequencies, cfg.include_input, d_enc_d)
    return dx.reshape(n, s, 3), dd


def save_params(path: str | Path, params: FieldParams, extra: dict | None = None) -> None:
    meta = params.config() | {"extra": extra or {}}
    write_archive(path, "field", meta, params.values)


def load_params(path: str | Path) -> tuple[FieldParams, dict]:
    meta, arrays = read_archive(path, "field")
    return params_from_archive(meta, arrays), meta.get("extra", {})


def params_from_archive(meta: dict, arrays: dict[str, np.ndarray]) -> FieldParams:
    enc = EncodingConfig(**meta["encoding"])
    widths = tuple(meta["widths"])
    head = int(meta["head_width"])
    shapes = layer_shapes(widths, head, enc)
    values = {}
    for name, shape in shapes.items():
        if name not in arrays or arrays[name].shape != shape:
            raise ValueError(f"checkpoint layer {name!r} missing or misshapen")
        values[name] = arrays[name].copy()
    return FieldParams(widths, head, enc, values)
