"""Synchronous A2C engine for IAC, VDAC-sum, VDAC-mix (and its linear ablation),
the naive central critic and COMA.

One update consumes one full episode from each parallel environment.  The
batch is padded time-major, the actor is re-unrolled over it, targets and
advantages are computed as constants, and every parameter group takes a
single RMSProp step.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .agents import ActorNet, greedy_action, sample_action
from .autodiff import Tensor
from .critics import CentralCritic, ComaCritic, MixingNetwork, TargetCopy, coma_advantage, vdac_sum_mix
from .envs import EnvError
from .nn import ParameterSet, RmsPropState, clip_grad_norm, rmsprop_update
from .returns import lambda_targets, nstep_targets, td_advantage
from .seeding import INIT, generator

ALGORITHMS = ("iac", "vdac_sum", "vdac_mix", "vdac_mix_linear", "naive_critic", "coma")


@dataclass
class TrainConfig:
    algorithm: str = "vdac_mix"
    env_name: str = "climb"
    env_overrides: dict = field(default_factory=dict)
    gamma: float = 0.99
    lam: float = 0.8
    lr: float = 5e-4
    n_envs: int = 8
    target_sync: int = 200
    entropy_coef: float = 0.0
    grad_clip: float = 10.0  # <= 0 disables clipping
    t_max: int = 20_000
    eval_interval: int = 2_000
    eval_episodes: int = 32
    seed: int = 0
    hidden_dim: int = 64
    mixer_embed: int = 32
    hypernet_hidden: int = 64
    critic_hidden: int = 128
    actor_coef: float = 1.0  # alpha_pi / lr
    value_coef: float = 1.0  # alpha_v / lr
    rms_decay: float = 0.99
    rms_eps: float = 1e-5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for name in ("n_envs", "target_sync", "t_max", "eval_interval", "eval_episodes", "hidden_dim",
                     "mixer_embed", "hypernet_hidden", "critic_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not 0.0 <= self.rms_decay < 1.0:
            raise ValueError(f"rms_decay must lie in [0, 1), got {self.rms_decay}")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpisodeBatch:
    """Time-major padded episodes; slot ``t`` holds what the agents saw before acting at ``t``.

    ``actions[L]`` of an episode of length ``L`` is the action drawn at its
    final observation; it is never executed and only feeds bootstraps.
    """

    obs: np.ndarray  # (T+1, E, N, O)
    states: np.ndarray  # (T+1, E, S)
    avail: np.ndarray  # (T+1, E, N, U) bool; all-True on padding
    actions: np.ndarray  # (T+1, E, N) int
    rewards: np.ndarray  # (T, E)
    terminated: np.ndarray  # (T, E)
    filled: np.ndarray  # (T, E)
    valid: np.ndarray  # (T+1, E) slots holding a real observation
    log_probs: np.ndarray  # (T, E, N) behaviour log-probabilities
    local_values: np.ndarray  # (T+1, E, N) rollout-time V^a
    probs: np.ndarray  # (T+1, E, N, U) rollout-time policies
    won: np.ndarray  # (E,) bool
    returns: np.ndarray  # (E,)
    lengths: np.ndarray  # (E,) int

    @property
    def T(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_envs(self) -> int:
        return self.rewards.shape[1]

    @property
    def n_agents(self) -> int:
        return self.actions.shape[2]

    @property
    def env_steps(self) -> int:
        return int(self.lengths.sum())

    def prev_actions(self) -> np.ndarray:
        """(T+1, E, N) previous joint action per slot, -1 at t = 0."""
        prev = np.full(self.actions.shape, -1, dtype=np.int64)
        prev[1:] = self.actions[:-1]
        return prev


@dataclass
class TrainStats:
    loss: float
    policy_loss: float
    value_loss: float
    mean_advantage: float
    entropy: float
    grad_norm: dict
    target_synced: bool = False


def _agent_ids(E: int, N: int) -> np.ndarray:
    return np.tile(np.arange(N), E)


def rollout(actor: ActorNet, envs: Sequence, rngs: Sequence[np.random.Generator] | None, greedy: bool = False) -> EpisodeBatch:
    """Run one episode in every environment under a fixed parameter snapshot."""
    E, N, U = len(envs), actor.n_agents, actor.n_actions
    if not greedy and (rngs is None or len(rngs) != E):
        raise ValueError("stochastic rollout needs one generator per environment")
    limit = max(env.episode_limit for env in envs)
    O = envs[0].obs_dim
    S = envs[0].state_dim
    obs = np.zeros((limit + 1, E, N, O))
    states = np.zeros((limit + 1, E, S))
    avail = np.ones((limit + 1, E, N, U), dtype=bool)
    actions = np.zeros((limit + 1, E, N), dtype=np.int64)
    rewards = np.zeros((limit, E))
    terminated = np.zeros((limit, E))
    filled = np.zeros((limit, E))
    valid = np.zeros((limit + 1, E))
    log_probs = np.zeros((limit, E, N))
    values = np.zeros((limit + 1, E, N))
    probs_all = np.zeros((limit + 1, E, N, U))
    won = np.zeros(E, dtype=bool)
    returns = np.zeros(E)
    lengths = np.zeros(E, dtype=np.int64)

    for e, env in enumerate(envs):
        step = env.reset()
        obs[0, e], states[0, e], avail[0, e] = step.observations, step.state, step.avail_actions
    valid[0] = 1.0
    alive = np.ones(E, dtype=bool)
    ids = _agent_ids(E, N)
    hidden = actor.init_hidden(E * N)
    t = 0
    with ad.no_grad():
        while True:
            prev = actions[t - 1] if t > 0 else np.full((E, N), -1)
            out = actor(obs[t], prev, ids, hidden, avail[t], t=t)
            hidden = out.hidden
            p = out.probs.data.reshape(E, N, U)
            probs_all[t] = p
            values[t] = out.local_values.data.reshape(E, N)
            for e in np.flatnonzero(valid[t]):
                if greedy:
                    actions[t, e] = greedy_action(p[e])
                else:
                    actions[t, e], lp = sample_action(p[e], rngs[e])
                    if alive[e]:
                        log_probs[t, e] = lp
            if not alive.any():
                break
            for e in np.flatnonzero(alive):
                try:
                    step = envs[e].step(actions[t, e])
                except EnvError as exc:
                    raise EnvError(f"env {e}: {exc}") from exc
                rewards[t, e] = step.reward
                terminated[t, e] = float(step.terminated)
                filled[t, e] = 1.0
                returns[e] += step.reward
                obs[t + 1, e], states[t + 1, e], avail[t + 1, e] = step.observations, step.state, step.avail_actions
                valid[t + 1, e] = 1.0
                if step.done:
                    alive[e] = False
                    won[e] = step.won
                    lengths[e] = t + 1
            t += 1
    T = t
    return EpisodeBatch(
        obs=obs[: T + 1], states=states[: T + 1], avail=avail[: T + 1], actions=actions[: T + 1],
        rewards=rewards[:T], terminated=terminated[:T], filled=filled[:T], valid=valid[: T + 1],
        log_probs=log_probs[:T], local_values=values[: T + 1], probs=probs_all[: T + 1],
        won=won, returns=returns, lengths=lengths,
    )


@dataclass
class Unrolled:
    log_probs: Tensor  # (T, E, N) log pi of the taken actions
    entropy: Tensor | None  # (T, E, N)
    local_values: Tensor  # (T+1, E, N)
    probs: np.ndarray  # (T+1, E, N, U)


def unroll_actor(actor: ActorNet, batch: EpisodeBatch, need_entropy: bool = False) -> Unrolled:
    """Replay the recurrent actor over a stored batch, recording the graph."""
    T, E, N = batch.T, batch.n_envs, batch.n_agents
    U = actor.n_actions
    ids = _agent_ids(E, N)
    prev = batch.prev_actions()
    hidden = actor.init_hidden(E * N)
    logps, ents, vals = [], [], []
    probs = np.zeros((T + 1, E, N, U))
    for t in range(T + 1):
        out = actor(batch.obs[t], prev[t], ids, hidden, batch.avail[t], t=t)
        hidden = out.hidden
        probs[t] = out.probs.data.reshape(E, N, U)
        vals.append(ad.reshape(out.local_values, (1, E * N)))
        if t < T:
            logps.append(ad.reshape(ad.gather(out.log_probs, batch.actions[t].reshape(-1)), (1, E * N)))
            if need_entropy:
                h = ad.neg(ad.sum_(ad.mul(out.probs, out.log_probs), axis=1))
                ents.append(ad.reshape(h, (1, E * N)))
    log_probs = ad.reshape(ad.concat(logps, axis=0), (T, E, N))
    entropy = ad.reshape(ad.concat(ents, axis=0), (T, E, N)) if need_entropy else None
    values = ad.reshape(ad.concat(vals, axis=0), (T + 1, E, N))
    return Unrolled(log_probs, entropy, values, probs)


def policy_loss(log_probs: Tensor, advantages, filled, entropy: Tensor | None = None, entropy_coef: float = 0.0) -> Tensor:
    """-sum(filled * log pi * A) / (sum(filled) * N), minus an optional entropy bonus.

    ``advantages`` and ``filled`` broadcast against ``log_probs`` of shape
    ``(T, E, N)``; advantages are constants.
    """
    if not np.all(np.isfinite(log_probs.data)):
        raise FloatingPointError("non-finite log-probability in policy loss")
    shape = log_probs.shape
    N = shape[-1]
    mask = np.broadcast_to(np.asarray(filled, dtype=np.float64)[..., None], shape)
    adv = np.broadcast_to(np.asarray(advantages, dtype=np.float64).reshape(
        np.shape(advantages) + (1,) * (len(shape) - np.ndim(advantages))), shape)
    denom = max(float(np.sum(filled)) * N, 1.0)
    loss = ad.neg(ad.sum_(ad.mul(log_probs, Tensor(mask * adv / denom))))
    if entropy is not None and entropy_coef > 0:
        loss = ad.sub(loss, ad.mul(ad.sum_(ad.mul(entropy, Tensor(mask / denom))), entropy_coef))
    return loss


def value_loss(targets, values: Tensor, filled) -> Tensor:
    """Mean squared error over filled entries; ``targets`` are constants."""
    y = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(filled, dtype=np.float64)
    if mask.shape != values.shape:
        mask = np.broadcast_to(mask.reshape(mask.shape + (1,) * (values.ndim - mask.ndim)), values.shape)
    denom = max(float(mask.sum()), 1.0)
    err = ad.sub(values, Tensor(y))
    return ad.sum_(ad.mul(ad.mul(err, err), Tensor(mask / denom)))


@dataclass
class EnvInfo:
    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    episode_limit: int

    @classmethod
    def of(cls, env) -> "EnvInfo":
        return cls(env.n_agents, env.n_actions, env.obs_dim, env.state_dim, env.episode_limit)


class Learner:
    """Networks, optimizer state and the per-algorithm loss for one training run."""

    def __init__(self, config: TrainConfig, info: EnvInfo):
        self.config = config
        self.info = info
        rng = generator(config.seed, INIT)
        self.actor = ActorNet(info.obs_dim, info.n_actions, info.n_agents, config.hidden_dim, rng=rng)
        algo = config.algorithm
        self.critic = None
        self.target: TargetCopy | None = None
        if algo in ("vdac_mix", "vdac_mix_linear"):
            self.critic = MixingNetwork(info.state_dim, info.n_agents, config.mixer_embed,
                                        config.hypernet_hidden, nonlinear=(algo == "vdac_mix"), rng=rng)
        elif algo == "naive_critic":
            self.critic = CentralCritic(info.state_dim, info.n_agents, info.n_actions, config.critic_hidden, rng=rng)
            self.target = TargetCopy(self.critic, config.target_sync)
        elif algo == "coma":
            self.critic = ComaCritic(info.state_dim, info.obs_dim, info.n_agents, info.n_actions,
                                     config.critic_hidden, rng=rng)
            self.target = TargetCopy(self.critic, config.target_sync)
        self.optimizers = {
            name: RmsPropState(config.lr, config.rms_decay, config.rms_eps) for name in self.parameter_groups()
        }
        self.train_steps = 0

    def parameter_groups(self) -> dict[str, ParameterSet]:
        groups = {"actor": self.actor.params}
        if self.critic is not None:
            groups["critic"] = self.critic.params
        return groups

    def all_params(self) -> ParameterSet:
        merged = ParameterSet()
        for name, group in self.parameter_groups().items():
            merged.merge(name, group)
        return merged

    def state_dict(self) -> dict[str, np.ndarray]:
        out = self.all_params().snapshot()
        if self.target is not None:
            out.update({f"target.{k}": v for k, v in self.target.params.snapshot().items()})
        return out

    def load_state_dict(self, values: dict[str, np.ndarray]) -> None:
        self.all_params().load({k: v for k, v in values.items() if not k.startswith("target.")})
        if self.target is not None:
            target_vals = {k[len("target."):]: v for k, v in values.items() if k.startswith("target.")}
            if target_vals:
                self.target.params.load(target_vals)

    # -- value estimates ------------------------------------------------------
    def _mixed_values(self, local: Tensor, batch: EpisodeBatch) -> Tensor:
        """V_tot per (slot, env) from local values for the VDAC variants."""
        T1, E, N = local.shape
        if self.config.algorithm == "vdac_sum":
            return vdac_sum_mix(local)
        flat = ad.reshape(local, (T1 * E, N))
        v = self.critic(flat, batch.states.reshape(T1 * E, -1))
        return ad.reshape(v, (T1, E))

    def _central_inputs(self, batch: EpisodeBatch) -> np.ndarray:
        T1, E = batch.valid.shape
        return self.critic.build_inputs(batch.states.reshape(T1 * E, -1), batch.prev_actions().reshape(T1 * E, -1))

    def state_values(self, batch: EpisodeBatch) -> np.ndarray:
        """Baseline V_tot(s_t) of shape (T+1, E) for the value-based critics (no graph)."""
        algo = self.config.algorithm
        with ad.no_grad():
            if algo == "naive_critic":
                return self.critic(self._central_inputs(batch)).data.reshape(batch.valid.shape)
            if algo in ("vdac_sum", "vdac_mix", "vdac_mix_linear"):
                un = unroll_actor(self.actor, batch)
                return self._mixed_values(un.local_values, batch).data
        raise ValueError(f"{algo} has no state-value baseline")

    # -- losses ----------------------------------------------------------------
    def losses(self, batch: EpisodeBatch, frozen: dict | None = None):
        """Build the total loss graph.

        Returns ``(total, stats, constants)`` where ``constants`` holds the
        targets and advantages used.  Passing them back as ``frozen`` keeps
        them fixed, which is what a finite-difference check needs.
        """
        cfg = self.config
        algo = cfg.algorithm
        gamma = cfg.gamma
        T, E, N = batch.T, batch.n_envs, batch.n_agents
        un = unroll_actor(self.actor, batch, need_entropy=cfg.entropy_coef > 0)
        filled = batch.filled

        if algo == "iac":
            v = un.local_values  # (T+1, E, N)
            y = nstep_targets(batch.rewards, v.data, batch.terminated, filled, gamma)
            if frozen:
                y = frozen["targets"]
            adv = td_advantage(y, v.data[:T]) if not frozen else frozen["advantages"]
            v_loss = value_loss(y, v[:T], filled)
        elif algo in ("vdac_sum", "vdac_mix", "vdac_mix_linear"):
            vtot = self._mixed_values(un.local_values, batch)  # (T+1, E)
            y = nstep_targets(batch.rewards, vtot.data, batch.terminated, filled, gamma)
            if frozen:
                y = frozen["targets"]
            adv = td_advantage(y, vtot.data[:T]) if not frozen else frozen["advantages"]
            v_loss = value_loss(y, vtot[:T], filled)
        elif algo == "naive_critic":
            inputs = self._central_inputs(batch)
            v_live = ad.reshape(self.critic(inputs), (T + 1, E))
            v_target = self.target(inputs).data.reshape(T + 1, E)
            y = nstep_targets(batch.rewards, v_target, batch.terminated, filled, gamma)
            if frozen:
                y = frozen["targets"]
            adv = td_advantage(y, v_target[:T]) if not frozen else frozen["advantages"]
            v_loss = value_loss(y, v_live[:T], filled)
        elif algo == "coma":
            U = self.info.n_actions
            inputs = self.critic.build_inputs(
                batch.states.reshape((T + 1) * E, -1),
                batch.obs.reshape((T + 1) * E, N, -1),
                batch.actions.reshape((T + 1) * E, N),
            )
            q_target = self.target(inputs).data.reshape(T + 1, E, N, U)
            q_target_taken = np.take_along_axis(q_target, batch.actions[..., None], axis=-1)[..., 0]
            y = lambda_targets(batch.rewards, q_target_taken, batch.terminated, filled, gamma, cfg.lam)
            if frozen:
                y = frozen["targets"]
            q_live = self.critic(inputs[: T * E * N])  # (T*E*N, U)
            q_taken = ad.reshape(ad.gather(q_live, batch.actions[:T].reshape(-1)), (T, E, N))
            if frozen:
                adv = frozen["advantages"]
            else:
                adv = coma_advantage(q_live.data.reshape(T, E, N, U), un.probs[:T], batch.actions[:T])
            v_loss = value_loss(y, q_taken, filled)
        else:  # pragma: no cover - guarded by TrainConfig
            raise ValueError(algo)

        p_loss = policy_loss(un.log_probs, adv, filled, un.entropy, cfg.entropy_coef)
        total = ad.add(ad.mul(p_loss, cfg.actor_coef), ad.mul(v_loss, cfg.value_coef))
        weight = np.broadcast_to(filled.reshape(filled.shape + (1,) * (np.ndim(adv) - 2)), np.shape(adv))
        denom = max(float(weight.sum()), 1.0)
        p = un.probs[:T]
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        entropy = float((-plogp.sum(axis=-1) * filled[..., None]).sum() / max(filled.sum() * N, 1.0))
        stats = {
            "loss": total.item(),
            "policy_loss": p_loss.item(),
            "value_loss": v_loss.item(),
            "mean_advantage": float((np.asarray(adv) * weight).sum() / denom),
            "entropy": entropy,
        }
        return total, stats, {"targets": np.asarray(y), "advantages": np.asarray(adv)}

    # -- update ---------------------------------------------------------------
    def train_step(self, batch: EpisodeBatch) -> TrainStats:
        groups = self.parameter_groups()
        for g in groups.values():
            g.zero_grad()
        total, stats, _ = self.losses(batch)
        if not math.isfinite(stats["loss"]):
            raise FloatingPointError(f"non-finite loss at train step {self.train_steps}: {stats}")
        ad.backward(total)
        norms = {}
        for name, group in groups.items():
            grads = group.grads()
            if self.config.grad_clip > 0:
                grads, norms[name] = clip_grad_norm(grads, self.config.grad_clip)
            else:
                norms[name] = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            rmsprop_update(self.optimizers[name], group, grads)
            group.zero_grad()
        self.train_steps += 1
        synced = self.target.tick(self.critic.params) if self.target is not None else False
        return TrainStats(grad_norm=norms, target_synced=synced, **stats)
