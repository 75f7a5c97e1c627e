import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vdac import autodiff as ad
from vdac.autodiff import DimensionError, Tensor
from vdac.nn import (
    CHECKPOINT_MAGIC,
    DenseLayer,
    GruCell,
    ParameterSet,
    RmsPropState,
    clip_grad_norm,
    gru_step,
    init_params,
    load_checkpoint,
    rmsprop_update,
    save_checkpoint,
)


def test_init_bounds_and_zero_bias(rng):
    p = init_params({"fc": (5, 16)}, rng)
    assert np.all(np.abs(p["fc.weight"].data) <= 0.25)
    assert np.all(p["fc.bias"].data == 0)


def test_init_rejects_zero_dims(rng):
    with pytest.raises(ValueError):
        init_params({"fc": (0, 3)}, rng)


def test_dense_layer_forward_and_gradients(rng):
    layer = DenseLayer(4, 3, "relu", rng=rng)
    x = rng.normal(size=(5, 4))
    expected = np.maximum(x @ layer.weight.data.T + layer.bias.data, 0)
    np.testing.assert_allclose(layer(Tensor(x)).data, expected)
    layer.bias.data[:] = 0.3  # keep pre-activations off the relu kink
    w = Tensor(rng.normal(size=(5, 3)))
    assert ad.grad_check(lambda: ad.sum_(ad.mul(layer(Tensor(x)), w)), layer.params) < 1e-7


def test_dense_layer_rejects_wrong_width(rng):
    with pytest.raises(DimensionError):
        DenseLayer(4, 3, rng=rng)(Tensor(np.ones((2, 5))))


def _gru_reference(cell, x, h):
    p = {k: v.data for k, v in cell.params.items()}
    H = cell.hidden_dim
    gi = x @ p["weight_ih"].T + p["bias_ih"]
    gh = h @ p["weight_hh"].T + p["bias_hh"]
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    r = sig(gi[:, :H] + gh[:, :H])
    z = sig(gi[:, H : 2 * H] + gh[:, H : 2 * H])
    n = np.tanh(gi[:, 2 * H :] + r * gh[:, 2 * H :])
    return (1 - z) * h + z * n


def test_gru_matches_reference_and_gradient(rng):
    cell = GruCell(3, 4, rng=rng)
    x, h = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    np.testing.assert_allclose(gru_step(cell, x, h).data, _gru_reference(cell, x, h), atol=1e-14)
    w = Tensor(rng.normal(size=(2, 4)))
    assert ad.grad_check(lambda: ad.sum_(ad.mul(cell(Tensor(x), Tensor(h)), w)), cell.params) < 1e-7


def test_gru_hidden_shape_error(rng):
    cell = GruCell(3, 4, rng=rng)
    with pytest.raises(DimensionError):
        cell(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 5))))


def test_rmsprop_first_step_by_hand():
    p = ParameterSet({"w": Tensor(np.array([1.0, -2.0]))})
    state = RmsPropState(lr=0.1, decay=0.9, eps=1e-5)
    g = np.array([0.5, -1.0])
    rmsprop_update(state, p, {"w": g})
    acc = 0.1 * g * g
    np.testing.assert_allclose(p["w"].data, np.array([1.0, -2.0]) - 0.1 * g / np.sqrt(acc + 1e-5))


def test_rmsprop_rejects_nonfinite_and_names_parameter():
    p = ParameterSet({"layer.w": Tensor(np.zeros(2))})
    with pytest.raises(FloatingPointError, match="layer.w"):
        rmsprop_update(RmsPropState(), p, {"layer.w": np.array([np.nan, 0.0])})


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=6), st.floats(0.1, 20))
def test_clip_grad_norm_bounds_norm(values, max_norm):
    grads = {"a": np.array(values)}
    clipped, norm = clip_grad_norm(grads, max_norm)
    assert norm == pytest.approx(np.linalg.norm(values))
    assert np.linalg.norm(clipped["a"]) <= max_norm * (1 + 1e-12)
    if norm <= max_norm:
        np.testing.assert_array_equal(clipped["a"], values)


def test_parameter_set_flat_roundtrip(rng):
    p = init_params({"a": (2, 3), "b": (1, 2)}, rng)
    vec = rng.normal(size=p.n_scalars)
    p.set_flat(vec)
    np.testing.assert_array_equal(p.flat(), vec)
    with pytest.raises(DimensionError):
        p.set_flat(vec[:-1])
    with pytest.raises(KeyError):
        p.load({"a.weight": np.zeros((2, 3))})


def test_checkpoint_roundtrip_and_layout(tmp_path, rng):
    params = {"w": rng.normal(size=(2, 3)), "scalar": np.array(1.5)}
    path = tmp_path / "c.bin"
    save_checkpoint(path, params)
    back = load_checkpoint(path)
    assert list(back) == ["w", "scalar"]
    np.testing.assert_array_equal(back["w"], params["w"])
    assert back["scalar"].shape == ()
    blob = path.read_bytes()
    assert blob[:8] == CHECKPOINT_MAGIC
    assert struct.unpack_from("<I", blob, 8)[0] == 1 and blob[12:13] == b"w"
    assert struct.unpack_from("<I2Q", blob, 13) == (2, 2, 3)


def test_checkpoint_rejects_bad_magic_and_truncation(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTACKPT")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(bad)
    good = tmp_path / "g.bin"
    save_checkpoint(good, {"w": np.ones(4)})
    good.write_bytes(good.read_bytes()[:-3])
    with pytest.raises(ValueError):
        load_checkpoint(good)
