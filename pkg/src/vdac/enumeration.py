"""Exact expectations over every trajectory of a small enumerable game.

An enumerable environment exposes ``model_initial()``, ``model_step(state,
joint_action)``, ``model_observations``, ``model_state_vector`` and
``model_avail``.  Every joint-action sequence and every stochastic branch is
laid out as one column of a padded :class:`EpisodeBatch`, so the recurrent
actor can be replayed over all of them at once and expectations become
weighted sums.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .trainer import EpisodeBatch, unroll_actor

MAX_JOINT_ACTIONS = 25
MAX_HORIZON = 5


@dataclass
class Enumeration:
    batch: EpisodeBatch
    env_prob: np.ndarray  # (B,) probability of the environment's branches alone
    state_ids: np.ndarray  # (T+1, B) hidden state per slot, -1 after the end

    @property
    def n_trajectories(self) -> int:
        return self.env_prob.shape[0]


def enumerate_trajectories(env) -> Enumeration:
    """Expand all trajectories up to ``env.episode_limit`` steps."""
    missing = [m for m in ("model_initial", "model_step", "model_observations", "model_state_vector", "model_avail")
               if not hasattr(env, m)]
    if missing:
        raise ValueError(f"{type(env).__name__} exposes no explicit model (missing {missing})")
    N, U, limit = env.n_agents, env.n_actions, env.episode_limit
    if U**N > MAX_JOINT_ACTIONS or limit > MAX_HORIZON:
        raise ValueError(f"enumeration intractable: {U**N} joint actions over {limit} steps "
                         f"(limits {MAX_JOINT_ACTIONS} and {MAX_HORIZON})")
    joint = list(itertools.product(range(U), repeat=N))
    # each path: (prob, [states], [joint actions], [rewards], terminated)
    frontier = [(p, [s], [], [], False) for p, s in env.model_initial() if p > 0]
    finished = []
    while frontier:
        nxt = []
        for prob, states, acts, rews, _ in frontier:
            s = states[-1]
            avail = np.asarray(env.model_avail(s), dtype=bool)
            for u in joint:
                if not all(avail[a, u[a]] for a in range(N)):
                    continue
                for p, s2, r, term in env.model_step(s, u):
                    if p <= 0:
                        continue
                    term = bool(term) or len(acts) + 1 >= limit
                    path = (prob * p, states + [s2], acts + [u], rews + [r], term)
                    (finished if term else nxt).append(path)
        frontier = nxt

    B = len(finished)
    T = max(len(path[3]) for path in finished)
    O, S = env.obs_dim, env.state_dim
    obs = np.zeros((T + 1, B, N, O))
    states = np.zeros((T + 1, B, S))
    avail = np.ones((T + 1, B, N, U), dtype=bool)
    actions = np.zeros((T + 1, B, N), dtype=np.int64)
    rewards = np.zeros((T, B))
    terminated = np.zeros((T, B))
    filled = np.zeros((T, B))
    valid = np.zeros((T + 1, B))
    state_ids = np.full((T + 1, B), -1, dtype=np.int64)
    env_prob = np.zeros(B)
    lengths = np.zeros(B, dtype=np.int64)
    returns = np.zeros(B)
    for b, (prob, ss, acts, rews, term) in enumerate(finished):
        L = len(acts)
        env_prob[b], lengths[b], returns[b] = prob, L, sum(rews)
        for t, s in enumerate(ss):
            obs[t, b] = env.model_observations(s)
            states[t, b] = env.model_state_vector(s)
            avail[t, b] = env.model_avail(s)
            state_ids[t, b] = s
            valid[t, b] = 1.0
        actions[:L, b] = acts
        rewards[:L, b] = rews
        filled[:L, b] = 1.0
        terminated[L - 1, b] = float(term)
    batch = EpisodeBatch(
        obs=obs, states=states, avail=avail, actions=actions, rewards=rewards, terminated=terminated,
        filled=filled, valid=valid, log_probs=np.zeros((T, B, N)), local_values=np.zeros((T + 1, B, N)),
        probs=np.zeros((T + 1, B, N, U)), won=np.zeros(B, dtype=bool), returns=returns, lengths=lengths,
    )
    return Enumeration(batch, env_prob, state_ids)


def trajectory_weights(actor, enum: Enumeration) -> np.ndarray:
    """P(trajectory) under the actor: environment probability times every taken action's probability."""
    with ad.no_grad():
        un = unroll_actor(actor, enum.batch)
    logp = (un.log_probs.data * enum.batch.filled[..., None]).sum(axis=(0, 2))
    return enum.env_prob * np.exp(logp)


def _prefix_groups(enum: Enumeration, t: int, include_action: bool) -> np.ndarray:
    """Group id per trajectory for the history up to slot ``t`` (optionally plus the action at ``t``)."""
    b = enum.batch
    cols = [enum.state_ids[: t + 1].T, b.actions[:t].transpose(1, 0, 2).reshape(b.n_envs, -1)]
    if include_action:
        cols.append(b.actions[t])
    keys = np.concatenate(cols, axis=1)
    _, ids = np.unique(keys, axis=0, return_inverse=True)
    return ids.reshape(-1)


def _group_mean(values: np.ndarray, weights: np.ndarray, groups: np.ndarray) -> np.ndarray:
    num = np.bincount(groups, weights=weights * values)
    den = np.bincount(groups, weights=weights)
    mean = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return mean[groups]


def exact_values(enum: Enumeration, weights: np.ndarray, gamma: float):
    """History-conditioned ``Q(h_t, u_t)`` of shape (T, B) and ``V(h_t)`` of shape (T+1, B).

    Both are expected discounted returns-to-go; ``V`` is zero once an
    episode has ended.
    """
    b = enum.batch
    T = b.T
    togo = np.zeros((T + 1, b.n_envs))
    for t in range(T - 1, -1, -1):
        togo[t] = b.filled[t] * (b.rewards[t] + gamma * togo[t + 1])
    q = np.zeros((T, b.n_envs))
    v = np.zeros((T + 1, b.n_envs))
    for t in range(T + 1):
        alive = b.filled[t] if t < T else np.zeros(b.n_envs)
        v[t] = alive * _group_mean(togo[t], weights, _prefix_groups(enum, t, False))
        if t < T:
            q[t] = b.filled[t] * _group_mean(togo[t], weights, _prefix_groups(enum, t, True))
    return q, v


def expected_score(actor, enum: Enumeration, coef, weights: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """``E[sum_t sum_a grad log pi(u^a_t | tau^a_t) * coef]`` with respect to the actor's parameters.

    ``coef`` has shape (T, B) (shared by all agents) or (T, B, N) and is a constant.
    """
    if weights is None:
        weights = trajectory_weights(actor, enum)
    b = enum.batch
    c = np.asarray(coef, dtype=np.float64)
    if c.ndim == 2:
        c = c[..., None]
    c = np.broadcast_to(c, (b.T, b.n_envs, b.n_agents)) * b.filled[..., None] * weights[None, :, None]
    actor.params.zero_grad()
    un = unroll_actor(actor, b)
    ad.backward(ad.sum_(ad.mul(un.log_probs, Tensor(c))))
    grads = {k: g.copy() for k, g in actor.params.grads().items()}
    actor.params.zero_grad()
    return grads


def objective_gradient(actor, enum: Enumeration, gamma: float) -> dict[str, np.ndarray]:
    """Gradient of ``J = sum_b P(b) * sum_t gamma^t r_t`` by differentiating the trajectory probabilities."""
    b = enum.batch
    disc = (gamma ** np.arange(b.T))[:, None] * b.rewards * b.filled
    ret = disc.sum(axis=0)
    actor.params.zero_grad()
    un = unroll_actor(actor, b)
    logp = ad.sum_(ad.mul(un.log_probs, Tensor(np.broadcast_to(b.filled[..., None], un.log_probs.shape))), axis=(0, 2))
    prob = ad.mul(ad.exp(logp), Tensor(enum.env_prob))
    ad.backward(ad.sum_(ad.mul(prob, Tensor(ret))))
    grads = {k: g.copy() for k, g in actor.params.grads().items()}
    actor.params.zero_grad()
    return grads


@dataclass
class MapgOracle:
    """Exact multi-agent policy-gradient quantities for one parameter point."""

    weights: np.ndarray
    q: np.ndarray
    v: np.ndarray
    q_gradient: dict  # E[sum grad log pi * Q(h, u)]
    td_gradient: dict  # E[sum grad log pi * (r + gamma V(h') - V(h))], exact V
    baseline_gradient: dict | None  # E[sum grad log pi * b], when a baseline is given


def vanilla_mapg_oracle(env_or_enum, actor, gamma: float, baseline=None) -> MapgOracle:
    """Enumerate ``env`` and compute the exact gradients the estimators should match in expectation.

    ``baseline`` is an optional (T+1, B) or (T, B) array of per-slot
    baselines evaluated on the enumerated batch.
    """
    enum = env_or_enum if isinstance(env_or_enum, Enumeration) else enumerate_trajectories(env_or_enum)
    w = trajectory_weights(actor, enum)
    q, v = exact_values(enum, w, gamma)
    b = enum.batch
    td = b.rewards + gamma * (1.0 - b.terminated) * v[1:] - v[:-1]
    q_grad = expected_score(actor, enum, q, w)
    td_grad = expected_score(actor, enum, td * b.filled, w)
    base_grad = None
    if baseline is not None:
        base = np.asarray(baseline, dtype=np.float64)[: b.T]
        base_grad = expected_score(actor, enum, base, w)
    return MapgOracle(w, q, v, q_grad, td_grad, base_grad)
