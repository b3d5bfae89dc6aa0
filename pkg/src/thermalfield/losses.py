"""Thermal losses and image metrics.

Windowed statistics use square ``kernel x kernel`` windows anchored at the
top-left corner and moved by ``stride``; windows that would overrun the
image are dropped. Moments inside a window are population moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

HSSIM_C2 = 9e-4
SSIM_C1 = 1e-4


@dataclass(frozen=True)
class WindowConfig:
    kernel: int = 4
    stride: int = 4

    def __post_init__(self):
        if self.kernel < 2 or self.stride < 1:
            raise ValueError(f"invalid window kernel={self.kernel} stride={self.stride}")


@dataclass(frozen=True)
class HssimConstants:
    c2: float = HSSIM_C2

    def __post_init__(self):
        if not self.c2 > 0:
            raise ValueError("C2 must be positive")


@dataclass
class Patch:
    height: int
    width: int
    values: np.ndarray  # (height, width)
    provenance: np.ndarray  # minibatch index of each patch pixel, row-major


def pixel_loss(predicted, target) -> tuple[float, np.ndarray]:
    """Mean squared thermal error and its gradient with respect to ``predicted``."""
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.size == 0:
        raise ValueError("pixel_loss needs a nonempty batch")
    if predicted.shape != target.shape:
        raise ValueError(f"shape mismatch {predicted.shape} vs {target.shape}")
    diff = predicted - target
    n = diff.size
    return float(np.dot(diff.ravel(), diff.ravel()) / n), 2.0 * diff / n


def _windows(img: np.ndarray, window: WindowConfig) -> np.ndarray:
    """(rows, cols, kernel, kernel) view of the retained windows."""
    l, s = window.kernel, window.stride
    return sliding_window_view(img, (l, l))[::s, ::s]


def _check_pair(X, Y, window: WindowConfig):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2:
        raise ValueError(f"images must be equal-shaped 2-D arrays, got {X.shape} and {Y.shape}")
    if min(X.shape) < window.kernel:
        raise ValueError(f"image {X.shape} smaller than kernel {window.kernel}")
    return X, Y


def _moments(X, Y, window):
    wx, wy = _windows(X, window), _windows(Y, window)
    mx = wx.mean(axis=(-1, -2), keepdims=True)
    my = wy.mean(axis=(-1, -2), keepdims=True)
    cx, cy = wx - mx, wy - my
    vx = (cx * cx).mean(axis=(-1, -2))
    vy = (cy * cy).mean(axis=(-1, -2))
    cov = (cx * cy).mean(axis=(-1, -2))
    return mx[..., 0, 0], my[..., 0, 0], vx, vy, cov, cx, cy


def ssim_map(X, Y, window: WindowConfig = WindowConfig(), c1: float = SSIM_C1, c2: float = HSSIM_C2):
    X, Y = _check_pair(X, Y, window)
    mx, my, vx, vy, cov, _, _ = _moments(X, Y, window)
    return ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))


def ssim(X, Y, window: WindowConfig = WindowConfig(), c1: float = SSIM_C1, c2: float = HSSIM_C2) -> float:
    """Mean windowed SSIM with luminance, contrast and structure terms."""
    return float(ssim_map(X, Y, window, c1, c2).mean())


def hssim(X, Y, window: WindowConfig = WindowConfig(), c: HssimConstants = HssimConstants()):
    """Luminance-free SSIM ``(2 cov + C2) / (var_X + var_Y + C2)`` averaged over windows.

    Returns ``(value, dvalue/dX)``.
    """
    X, Y = _check_pair(X, Y, window)
    _, _, vx, vy, cov, cx, cy = _moments(X, Y, window)
    num = 2 * cov + c.c2
    den = vx + vy + c.c2
    n_win = num.size
    n_px = window.kernel**2
    # d(num/den)/dX_p = 2 (cy_p den - num cx_p) / (n den^2)
    g_win = (2.0 / (n_px * n_win)) * (cy * den[..., None, None] - num[..., None, None] * cx) / (den**2)[..., None, None]
    grad = np.zeros_like(X)
    s = window.stride
    rows, cols = num.shape
    for a in range(window.kernel):
        for b in range(window.kernel):
            grad[a : a + s * rows : s, b : b + s * cols : s] += g_win[:, :, a, b]
    return float((num / den).mean()), grad


def generate_patch(values, shape: tuple[int, int], seed) -> Patch:
    """Lay a random permutation of a pixel minibatch out as an h x w patch.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    h, w = shape
    if h * w != values.size:
        raise ValueError(f"patch shape {shape} does not hold {values.size} pixels")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(values.size)
    return Patch(h, w, values[perm].reshape(h, w), perm)


def patch_like(patch: Patch, values) -> Patch:
    """Arrange another set of minibatch values with the same permutation."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != patch.provenance.size:
        raise ValueError("value count does not match the patch")
    return Patch(patch.height, patch.width, values[patch.provenance].reshape(patch.height, patch.width), patch.provenance)


def square_patch_shape(batch: int) -> tuple[int, int]:
    side = int(round(np.sqrt(batch)))
    if side * side != batch:
        raise ValueError(f"batch size {batch} is not a perfect square")
    return side, side


def thermal_intensity(target_patch: Patch) -> float:
    """Mean target thermal value of a patch (a constant weight, no gradient)."""
    if target_patch.values.size == 0:
        raise ValueError("empty patch")
    return float(target_patch.values.mean())


def structural_loss(
    pred_patch: Patch,
    target_patch: Patch,
    window: WindowConfig = WindowConfig(),
    c: HssimConstants = HssimConstants(),
) -> tuple[float, np.ndarray]:
    """Intensity-weighted structural loss ``E * (1 - HSSIM)``.

    The gradient is returned in minibatch order (undoing the patch permutation)
    and flows to the predicted values only.
    """
    if pred_patch.values.shape != target_patch.values.shape:
        raise ValueError("patch shapes differ")
    if not np.array_equal(pred_patch.provenance, target_patch.provenance):
        raise ValueError("patches were generated with different permutations")
    weight = thermal_intensity(target_patch)
    value, d_hssim = hssim(pred_patch.values, target_patch.values, window, c)
    grad = np.empty(pred_patch.provenance.size)
    grad[pred_patch.provenance] = (-weight * d_hssim).ravel()
    return weight * (1.0 - value), grad


def total_loss(pixel: float, structural: float) -> float:
    return pixel + structural


def psnr(X, Y, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``inf``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    mse = float(np.mean((X - Y) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
