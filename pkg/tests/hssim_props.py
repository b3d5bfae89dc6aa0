"""Randomized HSSIM property trials shared by the unit and acceptance suites."""

import numpy as np

from gradchecks import random_window
from thermalfield.losses import hssim, ssim

EXACT = 1e-12
OFFSET_TOL = 1e-9
SSIM_SHIFT = 1e-3


def random_pair(rng):
    window, shape = random_window(rng)
    X = rng.uniform(0, 1, size=shape)
    Y = np.clip(X + rng.normal(scale=rng.uniform(0.0, 0.6), size=shape), 0, 1)
    return window, X, Y


def trial_identity(rng) -> bool:
    window, X, _ = random_pair(rng)
    return abs(hssim(X, X, window)[0] - 1.0) <= EXACT


def trial_symmetry(rng) -> bool:
    window, X, Y = random_pair(rng)
    return abs(hssim(X, Y, window)[0] - hssim(Y, X, window)[0]) <= EXACT


def trial_range(rng) -> bool:
    window, X, Y = random_pair(rng)
    if rng.integers(0, 2):
        Y = 1.0 - X  # anti-correlated pairs sit near the lower bound
    v = hssim(X, Y, window)[0]
    return -1.0 <= v <= 1.0


def trial_offset_both(rng) -> bool:
    window, X, Y = random_pair(rng)
    a, b = rng.uniform(-1, 1, size=2)
    return abs(hssim(X + a, Y + b, window)[0] - hssim(X, Y, window)[0]) <= OFFSET_TOL


def trial_offset_either(rng) -> bool:
    window, X, Y = random_pair(rng)
    a = rng.uniform(-1, 1)
    base = hssim(X, Y, window)[0]
    return abs(hssim(X + a, Y, window)[0] - base) <= OFFSET_TOL and abs(hssim(X, Y + a, window)[0] - base) <= OFFSET_TOL


def trial_contrast(rng) -> bool:
    """An offset moves SSIM through its luminance term but leaves HSSIM unchanged."""
    window = random_window(rng)[0]
    X = rng.uniform(0.1, 0.6, size=(window.kernel * 3, window.kernel * 3))
    Y = np.clip(X + rng.normal(scale=0.02, size=X.shape), 0, 1)
    a = rng.uniform(0.2, 0.4)
    ssim_moves = abs(ssim(X + a, Y, window) - ssim(X, Y, window)) > SSIM_SHIFT
    hssim_still = abs(hssim(X + a, Y, window)[0] - hssim(X, Y, window)[0]) <= OFFSET_TOL
    return ssim_moves and hssim_still


TRIALS = {
    "identity": trial_identity,
    "symmetry": trial_symmetry,
    "range": trial_range,
    "offset_both": trial_offset_both,
    "offset_either": trial_offset_either,
    "ssim_vs_hssim_offset": trial_contrast,
}
