"""One-configuration gradient checks shared by the unit and acceptance suites.

Each ``check_*`` draws a random configuration, compares the analytic
gradient with central differences and returns the largest norm-wise
relative error over all checked tensors.
"""

import numpy as np

from oracles import FD_STEP, central_diff, min_kink_margin, random_field, reference_field, rel_error
from thermalfield.field import field_backward, field_forward
from thermalfield.geometry import SceneBox, contract, pixel_rays, se3_exp
from thermalfield.losses import WindowConfig, generate_patch, hssim, patch_like, structural_loss
from thermalfield.render import composite, composite_backward
from thermalfield.synthetic import default_intrinsics, orbit_poses
from thermalfield.train import Minibatch, TrainConfig, TrainData, loss_and_gradients

KINK_MARGIN = 1e-4


def unit_rows(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def check_field(rng) -> float:
    while True:
        params = random_field(rng)
        n, s = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.uniform(-1, 1, size=(n, s, 3))
        d = unit_rows(rng, n)
        if min_kink_margin(params.values, params.encoding, params.n_trunk, x, d) > KINK_MARGIN:
            break
    wt, ws = rng.normal(size=(n, s)), rng.normal(size=(n, s))

    def objective():
        out, _ = field_forward(params, x, d)
        return float(np.sum(wt * out.thermal) + np.sum(ws * out.density))

    params.zero_grad()
    _, cache = field_forward(params, x, d)
    dx, dd = field_backward(params, cache, wt, ws, input_grads=True)
    errs = [rel_error(params.grads[k], central_diff(objective, params.values[k])) for k in params.values]
    errs.append(rel_error(dx, central_diff(objective, x)))
    errs.append(rel_error(dd, central_diff(objective, d)))
    return max(errs)


def check_composite(rng) -> float:
    n, s = int(rng.integers(1, 5)), int(rng.integers(1, 17))
    t = rng.uniform(0, 1, size=(n, s))
    sigma = rng.exponential(rng.uniform(0.1, 5.0), size=(n, s))
    delta = float(rng.uniform(0.01, 0.5))
    w = rng.normal(size=n)

    def objective():
        return float(w @ composite(t, sigma, delta)[0])

    _, weights = composite(t, sigma, delta)
    d_t, d_sigma = composite_backward(t, sigma, delta, weights, w)
    return max(rel_error(d_t, central_diff(objective, t)), rel_error(d_sigma, central_diff(objective, sigma)))


def random_window(rng) -> tuple[WindowConfig, tuple[int, int]]:
    k = int(rng.integers(2, 6))
    window = WindowConfig(k, int(rng.integers(1, k + 1)))
    return window, (k + int(rng.integers(0, 9)), k + int(rng.integers(0, 9)))


def check_hssim(rng) -> float:
    window, shape = random_window(rng)
    X = rng.uniform(0, 1, size=shape)
    Y = np.clip(X + rng.normal(scale=rng.uniform(0.01, 0.5), size=shape), 0, 1)
    _, grad = hssim(X, Y, window)
    return rel_error(grad, central_diff(lambda: hssim(X, Y, window)[0], X))


def check_structural(rng) -> float:
    k = int(rng.integers(2, 5))
    side = k * int(rng.integers(1, 4))
    window = WindowConfig(k, int(rng.integers(1, k + 1)))
    target = rng.uniform(0, 1, size=side * side)
    pred = np.clip(target + rng.normal(scale=0.2, size=target.size), 0, 1)
    tp = generate_patch(target, (side, side), int(rng.integers(2**31)))

    def objective():
        return structural_loss(patch_like(tp, pred), tp, window)[0]

    _, grad = structural_loss(patch_like(tp, pred), tp, window)
    return rel_error(grad, central_diff(objective, pred))


def _pose_problem(rng):
    res, views = 8, int(rng.integers(2, 4))
    box = SceneBox(-np.ones(3), np.ones(3))
    data = TrainData(
        rng.uniform(0, 1, size=(views, res, res)),
        orbit_poses(views, 2.6, float(rng.uniform(0, 1)), phase=float(rng.uniform(0, 6.28))),
        default_intrinsics(res),
        box,
        0.5,
        4.0,
    )
    config = TrainConfig(
        batch_rays=16, samples_per_ray=int(rng.integers(4, 9)), kernel=4, stride=4,
        structural_loss=bool(rng.integers(0, 2)), hidden_width=6, hidden_layers=2,
    )
    params = random_field(rng, max_layers=2, max_width=6)
    # bias the density head so rays carry weight through the box
    params.values["density.bias"][:] = rng.uniform(0.0, 1.5)
    img = rng.integers(0, views, size=16)
    u, v = rng.integers(0, res, size=16), rng.integers(0, res, size=16)
    target = data.images[img, v, u]
    patch = generate_patch(target, (4, 4), rng) if config.structural_loss else None
    mb = Minibatch(img, u, v, target, rng.random((16, config.samples_per_ray)), patch)
    tangents = rng.normal(scale=0.05, size=(views, 6))
    return params, data, config, mb, tangents


def _pose_pattern(params, data, config, mb, tangents):
    """Every ReLU sign and box-membership bit the pose chain passes through."""
    from thermalfield.render import sample_depths

    h, _ = sample_depths(data.near, data.far, config.samples_per_ray, mb.jitter)
    xs, ds = [], []
    for k in range(len(mb.image)):
        pose = se3_exp(tangents[mb.image[k]]) @ data.poses[mb.image[k]]
        o, d = pixel_rays(data.intrinsics, pose.R, pose.translation, mb.u[k : k + 1], mb.v[k : k + 1])
        xs.append(o + h[k][:, None] * d)
        ds.append(d[0])
    xc = contract(np.stack(xs), data.box)
    pre = reference_field(params.values, params.encoding, params.n_trunk, xc, np.stack(ds))[2]
    inside = np.all(np.abs(xc) <= 1.0, axis=-1)
    margin = min(np.abs(z).min() for z in pre)
    box_margin = np.abs(np.abs(xc).max(axis=-1) - 1.0).min()
    return min(margin, box_margin), inside


def check_pose(rng) -> float:
    """Pose-tangent gradient of the full training loss through rendering."""
    while True:
        params, data, config, mb, tangents = _pose_problem(rng)
        margin, inside = _pose_pattern(params, data, config, mb, tangents)
        if margin > 1e-3 and inside.any():
            break

    def objective():
        return loss_and_gradients(params, data.poses, tangents, data, config, mb, True)[0]["l_tot"]

    _, grad = loss_and_gradients(params, data.poses, tangents, data, config, mb, True)
    return rel_error(grad, central_diff(objective, tangents, FD_STEP))


CHECKS = {
    "field": check_field,
    "composite": check_composite,
    "hssim": check_hssim,
    "structural_loss": check_structural,
    "pose_tangents": check_pose,
}
