import numpy as np
import pytest

from vdac.enumeration import (
    enumerate_trajectories,
    exact_values,
    expected_score,
    objective_gradient,
    trajectory_weights,
    vanilla_mapg_oracle,
)
from vdac.envs import make_env
from vdac.trainer import EnvInfo, Learner, TrainConfig


def _actor(env_name, seed):
    env = make_env(env_name)
    return Learner(TrainConfig(env_name=env_name, seed=seed, hidden_dim=8), EnvInfo.of(env)).actor


def test_climb_enumeration_covers_joint_actions():
    enum = enumerate_trajectories(make_env("climb"))
    assert enum.n_trajectories == 9
    assert sorted(enum.batch.rewards[0]) == sorted(np.array([11, -30, 0, -30, 7, 6, 0, 0, 5], dtype=float))


def test_weights_form_a_distribution():
    env = make_env("twostate")
    enum = enumerate_trajectories(env)
    assert enum.n_trajectories == 2 * 8**3
    w = trajectory_weights(_actor("twostate", 0), enum)
    assert w.sum() == pytest.approx(1.0, abs=1e-12) and np.all(w >= 0)


def test_exact_q_on_climb_is_the_payoff():
    enum = enumerate_trajectories(make_env("climb"))
    w = trajectory_weights(_actor("climb", 1), enum)
    q, v = exact_values(enum, w, 0.99)
    np.testing.assert_allclose(q[0], enum.batch.rewards[0])
    np.testing.assert_allclose(v[0], (w * enum.batch.rewards[0]).sum())


def test_objective_gradient_matches_q_gradient_without_discount():
    enum = enumerate_trajectories(make_env("twostate"))
    actor = _actor("twostate", 2)
    oracle = vanilla_mapg_oracle(enum, actor, 1.0)
    direct = objective_gradient(actor, enum, 1.0)
    for k in direct:
        np.testing.assert_allclose(oracle.q_gradient[k], direct[k], atol=1e-12)


def test_deterministic_policy_has_no_baseline_term():
    enum = enumerate_trajectories(make_env("climb"))
    actor = _actor("climb", 3)
    actor.params["policy_head.bias"].data[...] = [60.0, 0.0, 0.0]
    grads = expected_score(actor, enum, np.ones((1, 9)) * 4.2)
    assert max(np.abs(g).max() for g in grads.values()) < 1e-20


def test_intractable_environment_rejected():
    with pytest.raises(ValueError, match="intractable"):
        enumerate_trajectories(make_env("twostate", horizon=8))
    with pytest.raises(ValueError, match="no explicit model"):
        enumerate_trajectories(make_env("pursuit7"))
