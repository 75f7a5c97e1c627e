"""Value estimators: sum and monotonic mixers, the naive central critic and the COMA critic."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor
from .nn import DenseLayer, ParameterSet


def vdac_sum_mix(local_values) -> Tensor:
    """V_tot as the plain sum of local values over the last axis."""
    v = local_values if isinstance(local_values, Tensor) else Tensor(local_values)
    return ad.sum_(v, axis=-1)


@dataclass
class MixerWeights:
    w1: Tensor  # (B, n_agents, embed), >= 0
    b1: Tensor  # (B, embed)
    w2: Tensor  # (B, embed), >= 0
    b2: Tensor  # (B,)


class MixingNetwork:
    """State-conditioned monotonic mixer whose weights come from hypernetworks.

    ``V_tot = w2 . act(v @ W1 + b1) + b2``; the weight hypernetworks end in
    ``abs`` so every mixing weight is non-negative, the bias ones do not.
    ``nonlinear=False`` swaps the ELU for the identity.
    """

    def __init__(
        self,
        state_dim: int,
        n_agents: int,
        embed_dim: int = 32,
        hypernet_hidden: int = 64,
        nonlinear: bool = True,
        rng=None,
    ):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim, self.n_agents, self.embed_dim = state_dim, n_agents, embed_dim
        self.nonlinear = nonlinear
        self.hyper_w1 = DenseLayer(state_dim, n_agents * embed_dim, "abs", rng=rng)
        self.hyper_b1 = DenseLayer(state_dim, embed_dim, "none", rng=rng)
        self.hyper_w2 = DenseLayer(state_dim, embed_dim, "abs", rng=rng)
        self.hyper_b2_hidden = DenseLayer(state_dim, hypernet_hidden, "relu", rng=rng)
        self.hyper_b2_out = DenseLayer(hypernet_hidden, 1, "none", rng=rng)
        self.params = ParameterSet()
        for name in ("hyper_w1", "hyper_b1", "hyper_w2", "hyper_b2_hidden", "hyper_b2_out"):
            self.params.merge(name, getattr(self, name).params)

    def hyper_weights(self, states) -> MixerWeights:
        s = states if isinstance(states, Tensor) else Tensor(states)
        if s.ndim != 2 or s.shape[1] != self.state_dim:
            raise DimensionError(f"mixer: state shape {s.shape} does not match state_dim={self.state_dim}")
        B = s.shape[0]
        w1 = ad.reshape(self.hyper_w1(s), (B, self.n_agents, self.embed_dim))
        b1 = self.hyper_b1(s)
        w2 = self.hyper_w2(s)
        b2 = ad.reshape(self.hyper_b2_out(self.hyper_b2_hidden(s)), (B,))
        return MixerWeights(w1, b1, w2, b2)

    def __call__(self, local_values, states) -> Tensor:
        v = local_values if isinstance(local_values, Tensor) else Tensor(local_values)
        if v.ndim == 1:
            v = ad.reshape(v, (1, v.shape[0]))
            states = np.asarray(states.data if isinstance(states, Tensor) else states).reshape(1, -1)
        if v.shape[1] != self.n_agents:
            raise DimensionError(f"mixer: got {v.shape[1]} local values for {self.n_agents} agents")
        w = self.hyper_weights(states)
        B, K = v.shape[0], self.embed_dim
        if w.b1.shape[0] != B:
            raise DimensionError(f"mixer: {B} value rows but {w.b1.shape[0]} state rows")
        spread = ad.broadcast_to(ad.reshape(v, (B, self.n_agents, 1)), (B, self.n_agents, K))
        pre = ad.add(ad.sum_(ad.mul(spread, w.w1), axis=1), w.b1)
        hidden = ad.elu(pre) if self.nonlinear else pre
        return ad.add(ad.sum_(ad.mul(hidden, w.w2), axis=1), w.b2)

    def pin_to_sum(self) -> None:
        """Force the hypernetworks to emit W1 = 1, W2 = 1/embed and zero biases (so V_tot = sum V^a)."""
        for layer in (self.hyper_w1, self.hyper_b1, self.hyper_w2, self.hyper_b2_hidden, self.hyper_b2_out):
            layer.weight.data[...] = 0.0
            layer.bias.data[...] = 0.0
        self.hyper_w1.bias.data[...] = 1.0
        self.hyper_w2.bias.data[...] = 1.0 / self.embed_dim


def vdac_mix(mixer: MixingNetwork, local_values, state) -> Tensor:
    return mixer(local_values, state)


class CentralCritic:
    """V(s_t, u_{t-1}): (state ++ joint previous-action one-hot) -> 128 -> 128 -> 1."""

    def __init__(self, state_dim: int, n_agents: int, n_actions: int, hidden: int = 128, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim, self.n_agents, self.n_actions = state_dim, n_agents, n_actions
        self.input_dim = state_dim + n_agents * n_actions
        self.fc1 = DenseLayer(self.input_dim, hidden, "relu", rng=rng)
        self.fc2 = DenseLayer(hidden, hidden, "relu", rng=rng)
        self.out = DenseLayer(hidden, 1, "none", rng=rng)
        self.params = ParameterSet()
        for name in ("fc1", "fc2", "out"):
            self.params.merge(name, getattr(self, name).params)

    def build_inputs(self, states, prev_joint_actions) -> np.ndarray:
        """``prev_joint_actions`` holds one action id per agent, -1 for none."""
        s = np.asarray(states, dtype=np.float64).reshape(-1, self.state_dim)
        u = np.asarray(prev_joint_actions, dtype=np.int64).reshape(s.shape[0], self.n_agents)
        onehot = np.zeros((s.shape[0], self.n_agents, self.n_actions))
        rows, agents = np.nonzero(u >= 0)
        onehot[rows, agents, u[rows, agents]] = 1.0
        return np.concatenate([s, onehot.reshape(s.shape[0], -1)], axis=1)

    def __call__(self, inputs) -> Tensor:
        x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"central critic: input shape {x.shape}, expected (*, {self.input_dim})")
        return ad.reshape(self.out(self.fc2(self.fc1(x))), (x.shape[0],))


def naive_critic_value(critic: CentralCritic, state, prev_joint_action) -> Tensor:
    return critic(critic.build_inputs(state, prev_joint_action))


class ComaCritic:
    """Q^a(s, (u^-a, .)): (state ++ obs^a ++ onehot(a) ++ onehot(u^-a)) -> 128 -> 128 -> |U|."""

    def __init__(self, state_dim: int, obs_dim: int, n_agents: int, n_actions: int, hidden: int = 128, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.state_dim, self.obs_dim = state_dim, obs_dim
        self.n_agents, self.n_actions = n_agents, n_actions
        self.input_dim = state_dim + obs_dim + n_agents + n_agents * n_actions
        self.fc1 = DenseLayer(self.input_dim, hidden, "relu", rng=rng)
        self.fc2 = DenseLayer(hidden, hidden, "relu", rng=rng)
        self.out = DenseLayer(hidden, n_actions, "none", rng=rng)
        self.params = ParameterSet()
        for name in ("fc1", "fc2", "out"):
            self.params.merge(name, getattr(self, name).params)

    def build_inputs(self, states, obs, joint_actions) -> np.ndarray:
        """Rows ordered (batch, agent); agent a's own action block is left at zero."""
        N, U = self.n_agents, self.n_actions
        s = np.asarray(states, dtype=np.float64).reshape(-1, self.state_dim)
        B = s.shape[0]
        o = np.asarray(obs, dtype=np.float64).reshape(B, N, self.obs_dim)
        u = np.asarray(joint_actions, dtype=np.int64).reshape(B, N)
        onehot = np.zeros((B, N, U))
        rows, agents = np.nonzero(u >= 0)
        onehot[rows, agents, u[rows, agents]] = 1.0
        others = np.repeat(onehot.reshape(B, 1, N * U), N, axis=1)
        for a in range(N):
            others[:, a, a * U : (a + 1) * U] = 0.0
        ids = np.broadcast_to(np.eye(N), (B, N, N))
        x = np.concatenate([np.repeat(s[:, None, :], N, axis=1), o, ids, others], axis=2)
        return x.reshape(B * N, self.input_dim)

    def __call__(self, inputs) -> Tensor:
        x = inputs if isinstance(inputs, Tensor) else Tensor(inputs)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"COMA critic: input shape {x.shape}, expected (*, {self.input_dim})")
        return self.out(self.fc2(self.fc1(x)))


def coma_q(critic: ComaCritic, state, obs_a, agent_id: int, others_actions) -> Tensor:
    """Q-row over all of agent ``agent_id``'s actions, others' actions held fixed.

    ``others_actions`` has one entry per agent; the entry for ``agent_id``
    itself is ignored.
    """
    N = critic.n_agents
    if not 0 <= agent_id < N:
        raise DimensionError(f"agent id {agent_id} out of range for {N} agents")
    u = np.array(others_actions, dtype=np.int64).reshape(N)
    u[agent_id] = -1
    obs = np.zeros((N, critic.obs_dim))
    obs[agent_id] = np.asarray(obs_a, dtype=np.float64).reshape(critic.obs_dim)
    x = critic.build_inputs(np.asarray(state).reshape(1, -1), obs[None], u[None])
    return ad.reshape(critic(x[agent_id : agent_id + 1]), (critic.n_actions,))


def coma_advantage(q_row, probs, taken):
    """Q(s,u) minus the policy-weighted counterfactual baseline; works on batched rows too."""
    q = np.asarray(q_row.data if isinstance(q_row, Tensor) else q_row, dtype=np.float64)
    p = np.asarray(probs.data if isinstance(probs, Tensor) else probs, dtype=np.float64)
    taken = np.asarray(taken, dtype=np.int64)
    q_taken = np.take_along_axis(q, taken[..., None], axis=-1)[..., 0]
    adv = q_taken - np.sum(p * q, axis=-1)
    return float(adv) if adv.ndim == 0 else adv


class TargetCopy:
    """Frozen clone of a network, hard-synced every ``period`` training steps."""

    def __init__(self, network, period: int = 200):
        if period < 1:
            raise ValueError("target sync period must be >= 1")
        self.network = copy.deepcopy(network)
        self.period = period
        self.steps_since_sync = 0

    @property
    def params(self) -> ParameterSet:
        return self.network.params

    def __call__(self, *args, **kwargs):
        with ad.no_grad():
            return self.network(*args, **kwargs)

    def tick(self, live: ParameterSet) -> bool:
        """Count one training step; sync and return True when the period elapses."""
        self.steps_since_sync += 1
        if self.steps_since_sync >= self.period:
            sync_target(self, live)
            return True
        return False


def sync_target(target: TargetCopy, live: ParameterSet) -> None:
    if list(target.params.keys()) != list(live.keys()):
        raise KeyError("target and live parameter names differ")
    for name, p in live.items():
        target.params[name].data[...] = p.data
    target.steps_since_sync = 0
