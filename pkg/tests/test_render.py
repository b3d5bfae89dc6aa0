import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradchecks import check_composite, check_pose
from oracles import REL_TOL
from thermalfield.field import init_params
from thermalfield.geometry import Pose, Ray, SceneBox
from thermalfield.render import (
    SamplingConfig,
    composite,
    composite_backward,
    field_thermal_at,
    lattice_points,
    render_density_grid,
    render_image,
    render_rays,
    sample_depths,
    sample_ray,
)
from thermalfield.synthetic import default_intrinsics, orbit_poses


def reference_composite(t, sigma, delta):
    """Sequential loop over samples."""
    value, trans, weights = 0.0, 1.0, []
    for ti, si in zip(t, sigma):
        alpha = 1.0 - np.exp(-si * delta)
        weights.append(trans * alpha)
        value += trans * alpha * ti
        trans *= 1.0 - alpha
    return value, np.array(weights)


def test_midpoints_two_samples():
    h, width = sample_depths(0.0, 1.0, 2)
    assert np.allclose(h, [0.25, 0.75]) and width == 0.5


def test_sample_ray_spacings():
    ray = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), 0.0, 1.0)
    h, delta = sample_ray(ray, SamplingConfig(2, stratified=False))
    assert np.allclose(h, [0.25, 0.75]) and np.allclose(delta, 0.5)


def test_stratified_reproducible_and_in_bins():
    ray = Ray(np.zeros(3), np.array([1.0, 0.0, 0.0]), 0.5, 3.0)
    cfg = SamplingConfig(8, stratified=True, seed=4)
    a, _ = sample_ray(ray, cfg, 7)
    b, _ = sample_ray(ray, cfg, 7)
    assert np.array_equal(a, b) and np.all(np.diff(a) > 0)


def test_stratified_bounds_exhaustive():
    n = 16
    jitter = np.random.default_rng(0).random((10_000 // n + 1, n))
    h, width = sample_depths(1.0, 5.0, n, jitter)
    lower = 1.0 + width * np.arange(n)
    assert np.all(h >= lower) and np.all(h < lower + width)
    assert h.size >= 10_000


def test_sampling_config_rejects_one_sample():
    with pytest.raises(ValueError):
        SamplingConfig(1)


def test_composite_empty_space():
    v, w = composite(np.full(5, 0.8), np.zeros(5), 0.1)
    assert v == 0 and not w.any()


def test_composite_opaque_first_sample():
    v, w = composite(np.array([0.7, 0.1, 0.2]), np.array([1e6, 1.0, 1.0]), 0.1)
    assert abs(v - 0.7) < 1e-12 and abs(w[0] - 1) < 1e-12


def test_composite_worked_value():
    v, _ = composite(np.array([0.3, 0.9]), np.array([1.0, 2.0]), 0.5)
    assert abs(v - 0.46310) < 1e-5
    assert abs(v - reference_composite([0.3, 0.9], [1.0, 2.0], 0.5)[0]) < 1e-15


@given(st.integers(1, 40), st.integers(0, 2**31))
def test_composite_matches_loop_and_weight_laws(n, seed):
    rng = np.random.default_rng(seed)
    t = rng.uniform(0, 1, n)
    sigma = rng.exponential(3.0, n)
    delta = float(rng.uniform(0.01, 1.0))
    v, w = composite(t, sigma, delta)
    rv, rw = reference_composite(t, sigma, delta)
    assert abs(v - rv) < 1e-12 and np.allclose(w, rw, atol=1e-13)
    assert np.all(w >= 0) and np.all(w <= 1) and w.sum() <= 1 + 1e-12


def test_backward_thermal_partial_is_weight(rng):
    t, sigma = rng.uniform(size=6), rng.uniform(0, 3, size=6)
    _, w = composite(t, sigma, 0.2)
    d_t, _ = composite_backward(t, sigma, 0.2, w, 1.0)
    assert np.array_equal(d_t, w)


def test_backward_single_sample_closed_form():
    t, s, d = np.array([0.6]), np.array([1.7]), 0.3
    _, w = composite(t, s, d)
    _, d_sigma = composite_backward(t, s, d, w, 1.0)
    assert abs(d_sigma[0] - d * np.exp(-s[0] * d) * t[0]) < 1e-15


def test_composite_gradients_finite_differences(rng):
    assert max(check_composite(rng) for _ in range(30)) < REL_TOL


def test_pose_chain_finite_differences(rng):
    assert max(check_pose(rng) for _ in range(10)) < REL_TOL


def test_outside_box_carries_no_density(rng):
    params = init_params(0, (8, 8))
    params.values["density.bias"][:] = 3.0
    box = SceneBox(-np.ones(3), np.ones(3))
    o = np.array([[0.0, 0.0, -5.0], [3.0, 3.0, -5.0]])
    d = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    h = np.broadcast_to(np.linspace(0.5, 9.5, 10), (2, 10))
    batch = render_rays(params, o, d, h, 1.0, box)
    assert batch.values[1] == 0.0 and batch.values[0] > 0.0
    assert np.all(batch.density[0][~batch.inside[0]] == 0)


def test_render_image_workers_and_repeat_bit_identical():
    params = init_params(2, (16, 16))
    intr = default_intrinsics(12)
    pose = orbit_poses(3, 2.6, 1.0)[1]
    box = SceneBox(-np.ones(3), np.ones(3))
    cfg = SamplingConfig(16, stratified=True, seed=5)
    a = render_image(params, pose, intr, 0.5, 4.0, box, cfg, chunk=50, workers=1)
    b = render_image(params, pose, intr, 0.5, 4.0, box, cfg, chunk=50, workers=3)
    c = render_image(params, pose, intr, 0.5, 4.0, box, cfg, chunk=144, workers=1)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.values, c.values)
    assert a.values.shape == (12, 12) and np.all((a.values >= 0) & (a.values <= 1))


def test_render_matches_per_ray_composite():
    params = init_params(3, (8,))
    params.values["density.bias"][:] = 1.0
    intr = default_intrinsics(4)
    pose = Pose(np.array([1.0, 0, 0, 0]), np.array([0.0, 0.0, -2.5]))
    box = SceneBox(-np.ones(3), np.ones(3))
    img = render_image(params, pose, intr, 1.0, 4.0, box, SamplingConfig(8, stratified=False))
    from thermalfield.field import field_forward
    from thermalfield.geometry import contract, pixel_ray

    h, delta = sample_depths(1.0, 4.0, 8)
    for v in range(4):
        for u in range(4):
            ray = pixel_ray(intr, pose, (u, v), 1.0, 4.0)
            xc = contract(ray.origin + h[:, None] * ray.direction, box)
            out, _ = field_forward(params, xc[None], ray.direction[None])
            sigma = out.density[0] * np.all(np.abs(xc) <= 1, axis=1)
            ref, _ = reference_composite(out.thermal[0], sigma, delta)
            assert abs(img.values[v, u] - min(max(ref, 0), 1)) < 1e-12


def test_density_grid_spot_checks(rng):
    from thermalfield.field import field_forward
    from thermalfield.geometry import contract

    params = init_params(4, (8, 8))
    box = SceneBox(np.array([-1.0, -2.0, 0.0]), np.array([1.0, 0.0, 3.0]))
    grid = render_density_grid(params, box, (5, 6, 7), chunk=17)
    pts = lattice_points(box, (5, 6, 7))
    assert grid.values.shape == (5, 6, 7)
    assert np.allclose(pts[0, 0, 0], box.min_corner) and np.allclose(pts[-1, -1, -1], box.max_corner)
    for _ in range(5):
        i, j, k = rng.integers(0, 5), rng.integers(0, 6), rng.integers(0, 7)
        out, _ = field_forward(params, contract(pts[i, j, k], box)[None], rng.normal(size=(1, 3)))
        assert abs(out.density[0, 0] - grid.values[i, j, k]) < 1e-12


def test_thermal_at_in_unit_interval(rng):
    params = init_params(1, (8,))
    vals = field_thermal_at(params, rng.uniform(-1, 1, size=(20, 3)), SceneBox(-np.ones(3), np.ones(3)))
    assert vals.shape == (20,) and np.all((vals > 0) & (vals < 1))


def test_lattice_rejects_tiny_resolution():
    with pytest.raises(ValueError):
        lattice_points(SceneBox(-np.ones(3), np.ones(3)), 1)
