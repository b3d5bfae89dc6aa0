import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradchecks import check_field
from oracles import REL_TOL, random_field, reference_encode, reference_field
from thermalfield.field import (
    EncodingConfig,
    FieldFault,
    encode,
    field_backward,
    field_forward,
    init_params,
    load_params,
    save_params,
)


def unit(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_encode_at_origin():
    e = encode(np.zeros(3), 4, False)
    sins = e.reshape(4, 2, 3)[:, 0]
    coss = e.reshape(4, 2, 3)[:, 1]
    assert not sins.any() and (coss == 1).all()


def test_encode_identity_when_no_frequencies(rng):
    x = rng.normal(size=(5, 3))
    assert np.array_equal(encode(x, 0, True), x)


@given(st.integers(0, 6), st.booleans(), st.integers(0, 2**31))
def test_encode_matches_term_oracle(L, include, seed):
    x = np.random.default_rng(seed).uniform(-2, 2, size=(4, 3))
    out = encode(x, L, include)
    assert out.shape == (4, 3 * (int(include) + 2 * L))
    assert np.allclose(out, reference_encode(x, L, include), atol=1e-15, rtol=0)


def test_zero_parameters_give_activation_constants():
    params = init_params(0, (8, 8))
    for v in params.values.values():
        v[:] = 0.0
    out, _ = field_forward(params, np.zeros((2, 3, 3)), np.tile([0.0, 0.0, 1.0], (2, 1)))
    assert np.allclose(out.density, np.log(2.0)) and np.allclose(out.thermal, 0.5)


def test_forward_matches_dense_oracle(rng):
    for _ in range(20):
        params = random_field(rng)
        x = rng.uniform(-1, 1, size=(3, 4, 3))
        d = unit(rng, 3)
        out, _ = field_forward(params, x, d)
        t, s, _ = reference_field(params.values, params.encoding, params.n_trunk, x, d)
        assert np.max(np.abs(out.thermal - t)) < 1e-12 and np.max(np.abs(out.density - s)) < 1e-12


def test_forward_is_pure_and_in_range(rng):
    params = init_params(3)
    x = rng.uniform(-1.5, 1.5, size=(6, 5, 3))
    d = unit(rng, 6)
    a, _ = field_forward(params, x, d)
    b, _ = field_forward(params, x, d)
    assert np.array_equal(a.thermal, b.thermal) and np.array_equal(a.density, b.density)
    assert np.all((a.thermal > 0) & (a.thermal < 1)) and np.all(a.density > 0)


def test_density_invariant_to_direction(rng):
    params = random_field(rng)
    x = rng.uniform(-1, 1, size=(4, 3, 3))
    a, _ = field_forward(params, x, unit(rng, 4))
    b, _ = field_forward(params, x, unit(rng, 4))
    assert np.array_equal(a.density, b.density)


def test_non_finite_parameter_faults_with_layer():
    params = init_params(0, (4, 4))
    params.values["trunk.1.weight"][0, 0] = np.nan
    with pytest.raises(FieldFault) as exc:
        field_forward(params, np.zeros(3), np.array([0.0, 0.0, 1.0]))
    assert exc.value.layer == "trunk.1"


def test_zero_upstream_leaves_gradients(rng):
    params = random_field(rng)
    _, cache = field_forward(params, rng.normal(size=(2, 2, 3)), unit(rng, 2))
    field_backward(params, cache, np.zeros((2, 2)), np.zeros((2, 2)))
    assert all(not g.any() for g in params.grads.values())


def test_single_layer_outer_product(rng):
    enc = EncodingConfig(0, 0, True)
    params = init_params(1, (4,), enc)
    x = rng.normal(size=(1, 1, 3))
    _, cache = field_forward(params, x, unit(rng, 1))
    field_backward(params, cache, 0.0, 1.0)
    # density = softplus(relu(x W0 + b0) . w + b): trunk gradient is an outer product
    z = x[0] @ params.values["trunk.0.weight"] + params.values["trunk.0.bias"]
    zd = np.maximum(z, 0) @ params.values["density.weight"][:, 0] + params.values["density.bias"][0]
    up = (1 / (1 + np.exp(-zd))) * params.values["density.weight"][:, 0] * (z[0] > 0)
    assert np.allclose(params.grads["trunk.0.weight"], np.outer(x[0, 0], up), atol=1e-14)


def test_backward_accumulates(rng):
    params = random_field(rng)
    x, d = rng.normal(size=(2, 3, 3)), unit(rng, 2)
    _, cache = field_forward(params, x, d)
    up = rng.normal(size=(2, 3))
    field_backward(params, cache, up, up)
    once = {k: g.copy() for k, g in params.grads.items()}
    field_backward(params, cache, up, up)
    assert all(np.allclose(params.grads[k], 2 * once[k]) for k in once)


def test_field_gradients_finite_differences(rng):
    assert max(check_field(rng) for _ in range(25)) < REL_TOL


def test_init_deterministic_and_bounds():
    a, b = init_params(9), init_params(9)
    assert all(np.array_equal(a.values[k], b.values[k]) for k in a.values)
    enc = EncodingConfig(0, 0, True)  # first layer fan_in = 3
    p = init_params(0, (16,), enc)
    assert np.max(np.abs(p.values["trunk.0.weight"])) <= np.sqrt(2.0)
    assert all(not p.values[k].any() for k in p.values if k.endswith("bias"))


def test_init_fan_in_six_bound_one():
    enc = EncodingConfig(0, 0, True)
    p = init_params(5, (6, 4000), enc)
    w = p.values["trunk.1.weight"]
    assert np.max(np.abs(w)) <= 1.0
    assert abs(w.std() - 1 / np.sqrt(3)) / (1 / np.sqrt(3)) < 0.02  # 24000 draws


def test_init_stddev_statistics():
    enc = EncodingConfig(0, 0, True)
    p = init_params(11, (6, 20000), enc)  # 1.2e5 draws with bound 1
    w = p.values["trunk.1.weight"]
    assert abs(w.std() * np.sqrt(3) - 1.0) < 0.02


def test_checkpoint_round_trip(tmp_path, rng):
    params = random_field(rng)
    save_params(tmp_path / "f.tfld", params, {"step": 12})
    back, extra = load_params(tmp_path / "f.tfld")
    assert extra == {"step": 12} and back.encoding == params.encoding
    assert all(np.array_equal(back.values[k], params.values[k]) for k in params.values)
