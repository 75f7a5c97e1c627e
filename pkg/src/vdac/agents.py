"""Shared-parameter recurrent actor with a policy head and a local value head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MaskError, Tensor
from .nn import DenseLayer, GruCell, ParameterSet


class ActorError(ValueError):
    pass


@dataclass
class PolicyOutput:
    probs: Tensor  # (rows, n_actions)
    log_probs: Tensor  # (rows, n_actions), zero where masked
    local_values: Tensor  # (rows,)
    hidden: Tensor  # (rows, hidden_dim)


class ActorNet:
    """obs ++ onehot(prev action) ++ onehot(agent) -> dense/relu -> GRU -> (policy logits, V^a).

    One parameter set serves every agent; the agent one-hot is the only
    thing that tells agents apart.
    """

    def __init__(self, obs_dim: int, n_actions: int, n_agents: int, hidden_dim: int = 64, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        self.obs_dim, self.n_actions, self.n_agents = obs_dim, n_actions, n_agents
        self.hidden_dim = hidden_dim
        self.input_dim = obs_dim + n_actions + n_agents
        self.encoder = DenseLayer(self.input_dim, hidden_dim, "relu", rng=rng)
        self.recurrent = GruCell(hidden_dim, hidden_dim, rng=rng)
        self.policy_head = DenseLayer(hidden_dim, n_actions, "none", rng=rng)
        self.value_head = DenseLayer(hidden_dim, 1, "none", rng=rng)
        self.params = ParameterSet()
        for name in ("encoder", "recurrent", "policy_head", "value_head"):
            self.params.merge(name, getattr(self, name).params)

    def init_hidden(self, rows: int) -> Tensor:
        return Tensor(np.zeros((rows, self.hidden_dim)))

    def build_inputs(self, obs, prev_actions, agent_ids) -> np.ndarray:
        """Row-wise inputs; ``prev_actions`` of -1 encodes "no previous action"."""
        obs = np.asarray(obs, dtype=np.float64).reshape(-1, self.obs_dim)
        rows = obs.shape[0]
        prev = np.asarray(prev_actions, dtype=np.int64).reshape(-1)
        ids = np.asarray(agent_ids, dtype=np.int64).reshape(-1)
        if prev.size != rows or ids.size != rows:
            raise ActorError(f"obs has {rows} rows but got {prev.size} previous actions and {ids.size} agent ids")
        x = np.zeros((rows, self.input_dim))
        x[:, : self.obs_dim] = obs
        has_prev = prev >= 0
        x[np.flatnonzero(has_prev), self.obs_dim + prev[has_prev]] = 1.0
        x[np.arange(rows), self.obs_dim + self.n_actions + ids] = 1.0
        return x

    def __call__(self, obs, prev_actions, agent_ids, hidden, avail_mask, t: int | None = None) -> PolicyOutput:
        return actor_forward(self, obs, prev_actions, agent_ids, hidden, avail_mask, t=t)


def actor_forward(net: ActorNet, obs, prev_actions, agent_ids, hidden, avail_mask, t: int | None = None) -> PolicyOutput:
    x = Tensor(net.build_inputs(obs, prev_actions, agent_ids))
    h = hidden if isinstance(hidden, Tensor) else Tensor(hidden)
    mask = np.asarray(avail_mask, dtype=bool).reshape(x.shape[0], net.n_actions)
    z = net.encoder(x)
    h_new = net.recurrent(z, h)
    logits = net.policy_head(h_new)
    try:
        probs = ad.softmax(logits, mask)
    except MaskError as exc:
        ids = np.asarray(agent_ids).reshape(-1)
        agents = sorted({int(ids[r]) for r in exc.rows})
        when = "" if t is None else f" at timestep {t}"
        raise ActorError(f"agent(s) {agents} have no available action{when}") from exc
    log_probs = ad.log_softmax(logits, mask)
    values = ad.reshape(net.value_head(h_new), (x.shape[0],))
    return PolicyOutput(probs=probs, log_probs=log_probs, local_values=values, hidden=h_new)


def _as_probs(probs) -> np.ndarray:
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ActorError("probabilities contain non-finite values")
    return np.atleast_2d(p)


def sample_action(probs, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-CDF categorical draw per row; returns (actions, log-probabilities)."""
    p = _as_probs(probs)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0])
    actions = (cdf <= u[:, None]).sum(axis=1)
    # rounding can leave cdf[-1] a hair below u: fall back to the last action with mass
    last = p.shape[1] - 1 - np.argmax(p[:, ::-1] > 0, axis=1)
    actions = np.minimum(actions, last)
    chosen = p[np.arange(p.shape[0]), actions]
    return actions.astype(np.int64), np.log(chosen)


def greedy_action(probs) -> np.ndarray:
    """Argmax per row; ties go to the lowest action id."""
    return np.argmax(_as_probs(probs), axis=1).astype(np.int64)
