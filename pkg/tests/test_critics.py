import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vdac import autodiff as ad
from vdac.autodiff import DimensionError, Tensor
from vdac.critics import (
    CentralCritic,
    ComaCritic,
    MixingNetwork,
    TargetCopy,
    coma_advantage,
    coma_q,
    sync_target,
    vdac_mix,
    vdac_sum_mix,
)

vals = st.floats(-10, 10, allow_nan=False)


def test_sum_mix_examples():
    assert vdac_sum_mix([1.0, 2.0, 3.0]).item() == 6.0
    v = Tensor([[1.0, -1.0], [2.0, 0.5]], requires_grad=True)
    ad.backward(ad.sum_(vdac_sum_mix(v)))
    np.testing.assert_array_equal(v.grad, np.ones((2, 2)))


def test_mixer_weights_nonnegative(rng):
    mixer = MixingNetwork(4, 3, embed_dim=6, rng=rng)
    w = mixer.hyper_weights(rng.normal(size=(10, 4)))
    assert np.all(w.w1.data >= 0) and np.all(w.w2.data >= 0)
    assert w.w1.shape == (10, 3, 6) and w.b2.shape == (10,)


def test_mixer_shape_errors(rng):
    mixer = MixingNetwork(4, 3, rng=rng)
    with pytest.raises(DimensionError):
        mixer(np.ones((2, 2)), np.ones((2, 4)))
    with pytest.raises(DimensionError):
        mixer(np.ones((2, 3)), np.ones((2, 5)))


def test_mixer_matches_explicit_formula(rng):
    mixer = MixingNetwork(3, 2, embed_dim=4, hypernet_hidden=5, rng=rng)
    s, v = rng.normal(size=(1, 3)), rng.normal(size=(1, 2))
    P = {k: p.data for k, p in mixer.params.items()}
    lin = lambda x, n: x @ P[f"{n}.weight"].T + P[f"{n}.bias"]  # noqa: E731
    W1 = np.abs(lin(s, "hyper_w1")).reshape(2, 4)
    b1 = lin(s, "hyper_b1")[0]
    w2 = np.abs(lin(s, "hyper_w2"))[0]
    b2 = lin(np.maximum(lin(s, "hyper_b2_hidden"), 0), "hyper_b2_out")[0, 0]
    pre = v[0] @ W1 + b1
    hidden = np.where(pre > 0, pre, np.expm1(np.minimum(pre, 0)))
    assert vdac_mix(mixer, v, s).item() == pytest.approx(hidden @ w2 + b2, abs=1e-13)


@given(arrays(np.float64, 3, elements=vals), arrays(np.float64, 4, elements=vals), st.integers(0, 10**6))
def test_mixer_is_monotone_in_every_local_value(v, s, seed):
    mixer = MixingNetwork(4, 3, embed_dim=5, hypernet_hidden=6, rng=np.random.default_rng(seed))
    v_t = Tensor(v[None], requires_grad=True)
    ad.backward(ad.sum_(mixer(v_t, s[None])))
    assert np.all(v_t.grad >= 0)


def test_pinned_mixer_equals_sum(rng):
    mixer = MixingNetwork(4, 3, embed_dim=8, nonlinear=False, rng=rng)
    mixer.pin_to_sum()
    v = rng.normal(size=(5, 3))
    np.testing.assert_allclose(mixer(v, rng.normal(size=(5, 4))).data, v.sum(axis=1), atol=1e-12)


def test_central_critic_inputs_and_output(rng):
    critic = CentralCritic(3, 2, 4, hidden=8, rng=rng)
    x = critic.build_inputs(np.ones((2, 3)), [[-1, -1], [1, 3]])
    assert x.shape == (2, 3 + 8)
    np.testing.assert_array_equal(x[0, 3:], 0)
    np.testing.assert_array_equal(x[1, 3:], [0, 1, 0, 0, 0, 0, 0, 1])
    assert critic(x).shape == (2,)


def test_coma_inputs_hide_own_action(rng):
    critic = ComaCritic(2, 3, 2, 3, hidden=8, rng=rng)
    x = critic.build_inputs(np.zeros((1, 2)), np.zeros((1, 2, 3)), [[2, 1]]).reshape(2, -1)
    own_a0 = x[0, 2 + 3 + 2 : 2 + 3 + 2 + 3]
    other_a0 = x[0, 2 + 3 + 2 + 3 :]
    np.testing.assert_array_equal(own_a0, 0)
    np.testing.assert_array_equal(other_a0, [0, 1, 0])
    np.testing.assert_array_equal(x[:, 5:7], np.eye(2))


def test_coma_q_row_independent_of_own_action(rng):
    critic = ComaCritic(2, 3, 2, 3, hidden=8, rng=rng)
    s, o = rng.normal(size=2), rng.normal(size=3)
    q1 = coma_q(critic, s, o, 0, [0, 1]).data
    q2 = coma_q(critic, s, o, 0, [2, 1]).data
    np.testing.assert_array_equal(q1, q2)
    assert q1.shape == (3,)
    with pytest.raises(DimensionError):
        coma_q(critic, s, o, 5, [0, 1])


def test_coma_advantage_by_hand():
    q = np.array([1.0, 2.0, 4.0])
    p = np.array([0.5, 0.25, 0.25])
    assert coma_advantage(q, p, 2) == pytest.approx(4.0 - 2.0)
    assert coma_advantage(q, p, 0) == pytest.approx(-1.0)


@given(st.integers(2, 7), st.integers(0, 10**6))
def test_coma_advantage_mean_zero(U, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(U)), rng.normal(scale=5, size=U)
    assert abs(sum(p[u] * coma_advantage(q, p, u) for u in range(U))) <= 1e-12


def test_target_copy_is_frozen_until_sync(rng):
    critic = CentralCritic(3, 2, 2, hidden=4, rng=rng)
    target = TargetCopy(critic, period=3)
    x = critic.build_inputs(np.ones((1, 3)), [[0, 1]])
    before = target(x).data.copy()
    critic.params["out.bias"].data += 1.0
    assert not target.tick(critic.params) and not target.tick(critic.params)
    np.testing.assert_array_equal(target(x).data, before)
    assert target.tick(critic.params)
    np.testing.assert_allclose(target(x).data, critic(x).data)
    assert target.steps_since_sync == 0


def test_target_output_carries_no_graph(rng):
    critic = CentralCritic(3, 2, 2, hidden=4, rng=rng)
    target = TargetCopy(critic)
    out = target(critic.build_inputs(np.ones((1, 3)), [[0, 1]]))
    assert out.node is None


def test_sync_rejects_mismatched_names(rng):
    a = TargetCopy(CentralCritic(3, 2, 2, hidden=4, rng=rng))
    b = MixingNetwork(3, 2, rng=rng)
    with pytest.raises(KeyError):
        sync_target(a, b.params)
