"""Cooperative Dec-POMDP environments with a shared reward and action masks.

Three tasks live here:

* ``climb``: the two-agent climbing matrix game (one step).
* ``pursuit7``: three hunters chase a scripted prey on a 7x7 grid.
* ``twostate``: a tiny two-state stochastic game whose dynamics are exposed
  as an explicit model so that expectations can be computed by enumerating
  every trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

__all__ = [
    "EnvError",
    "EnvStep",
    "MatrixGameSpec",
    "PursuitGridSpec",
    "TwoStateSpec",
    "MatrixGame",
    "PursuitGrid",
    "TwoStateGame",
    "make_env",
    "env_spec_from_config",
    "optimal_return",
    "ENV_NAMES",
]


class EnvError(RuntimeError):
    """Illegal use of an environment (bad action, stepping a finished episode, ...)."""


@dataclass
class EnvStep:
    observations: np.ndarray  # (n_agents, obs_dim)
    state: np.ndarray  # (state_dim,)
    avail_actions: np.ndarray  # (n_agents, n_actions) bool
    reward: float = 0.0
    terminated: bool = False
    won: bool = False
    truncated: bool = False
    t: int = 0

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


# ---------------------------------------------------------------------------
# climb matrix game

CLIMB_PAYOFF = ((11.0, -30.0, 0.0), (-30.0, 7.0, 6.0), (0.0, 0.0, 5.0))


@dataclass(frozen=True)
class MatrixGameSpec:
    payoff: tuple[tuple[float, ...], ...] = CLIMB_PAYOFF
    name: str = "climb"

    def __post_init__(self):
        table = np.asarray(self.payoff, dtype=float)
        if table.ndim != 2 or table.shape[0] != table.shape[1]:
            raise ValueError("payoff must be a square table")
        if not np.all(np.isfinite(table)):
            raise ValueError("payoff entries must be finite")
        if np.count_nonzero(table == table.max()) != 1:
            raise ValueError("payoff must have a unique maximal entry")


class _Env:
    n_agents: int
    n_actions: int
    obs_dim: int
    state_dim: int
    episode_limit: int

    def _check_agent(self, agent_id: int) -> None:
        if not 0 <= int(agent_id) < self.n_agents:
            raise EnvError(f"agent id {agent_id} out of range [0, {self.n_agents})")

    def _check_actions(self, actions, avail: np.ndarray, t: int) -> np.ndarray:
        acts = np.asarray(actions, dtype=np.int64).reshape(-1)
        if acts.size != self.n_agents:
            raise EnvError(f"expected {self.n_agents} actions, got {acts.size}")
        for a, u in enumerate(acts):
            if not (0 <= u < self.n_actions) or not avail[a, u]:
                raise EnvError(f"agent {a}: action {int(u)} is unavailable at step {t}")
        return acts


class MatrixGame(_Env):
    """Single-step cooperative matrix game for two agents."""

    def __init__(self, spec: MatrixGameSpec | None = None, seed: int | None = None):
        self.spec = spec or MatrixGameSpec()
        self.payoff = np.asarray(self.spec.payoff, dtype=float)
        self.n_agents = 2
        self.n_actions = self.payoff.shape[0]
        self.obs_dim = 1
        self.state_dim = 2
        self.episode_limit = 1
        self._t = 0
        self._done = True

    def reset(self, seed: int | None = None) -> EnvStep:
        self._t = 0
        self._done = False
        return self._observe_all()

    def observe(self, agent_id: int) -> np.ndarray:
        self._check_agent(agent_id)
        return np.ones(1)

    def get_state(self) -> np.ndarray:
        return np.ones(2)

    def avail_actions(self) -> np.ndarray:
        return np.ones((2, self.n_actions), dtype=bool)

    def _observe_all(self, **kw) -> EnvStep:
        obs = np.stack([self.observe(a) for a in range(2)])
        return EnvStep(obs, self.get_state(), self.avail_actions(), t=self._t, **kw)

    def step(self, actions) -> EnvStep:
        if self._done:
            raise EnvError("step() called on a finished episode; call reset()")
        u = self._check_actions(actions, self.avail_actions(), self._t)
        reward = float(self.payoff[u[0], u[1]])
        self._t += 1
        self._done = True
        won = reward == float(self.payoff.max())
        return self._observe_all(reward=reward, terminated=True, won=won)

    # explicit model for trajectory enumeration
    def model_initial(self):
        return [(1.0, 0)]

    def model_step(self, state, joint_action):
        reward = float(self.payoff[joint_action[0], joint_action[1]])
        return [(1.0, 0, reward, True)]

    def model_observations(self, state) -> np.ndarray:
        return np.ones((2, 1))

    def model_state_vector(self, state) -> np.ndarray:
        return np.ones(2)

    def model_avail(self, state) -> np.ndarray:
        return np.ones((2, self.n_actions), dtype=bool)


# ---------------------------------------------------------------------------
# pursuit gridworld

NORTH, SOUTH, EAST, WEST, STAY, TAG = range(6)
_DELTAS = ((-1, 0), (1, 0), (0, 1), (0, -1), (0, 0))


@dataclass(frozen=True)
class PursuitGridSpec:
    size: int = 7
    n_agents: int = 3
    sight_radius: int = 2
    episode_limit: int = 40
    step_reward: float = -0.05
    capture_reward: float = 10.0
    min_taggers: int = 2
    # fixed (hunter cells..., prey cell) as (row, col) pairs; None draws a layout from the seed
    layout: tuple[tuple[int, int], ...] | None = None
    name: str = "pursuit7"

    def __post_init__(self):
        if self.size < 2 or self.n_agents < 1 or self.episode_limit < 1:
            raise ValueError("invalid pursuit spec")
        if self.layout is not None:
            if len(self.layout) != self.n_agents + 1:
                raise ValueError("layout needs one cell per hunter plus the prey")
            for r, c in self.layout:
                if not (0 <= r < self.size and 0 <= c < self.size):
                    raise ValueError(f"layout cell {(r, c)} outside the grid")
            if tuple(self.layout[-1]) in {tuple(x) for x in self.layout[:-1]}:
                raise ValueError("prey must not share a cell with a hunter")


def _manhattan(a, b) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _chebyshev(a, b) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


class PursuitGrid(_Env):
    """Hunters must corner a fleeing prey; two adjacent hunters plus a tag capture it.

    Order within a step: hunters move simultaneously (a tagging hunter
    stays put), the capture rule is checked, then the prey flees.  Hunters
    may share cells but never enter the prey's cell.
    """

    def __init__(self, spec: PursuitGridSpec | None = None, seed: int | None = None):
        self.spec = spec or PursuitGridSpec()
        s = self.spec
        self.n_agents = s.n_agents
        self.n_actions = 6
        self.obs_dim = 2 + 3 * s.n_agents
        self.state_dim = 2 * (s.n_agents + 1) + 1
        self.episode_limit = s.episode_limit
        self._rng = np.random.default_rng(seed)
        self.hunters: list[tuple[int, int]] = []
        self.prey: tuple[int, int] = (0, 0)
        self._t = 0
        self._done = True

    # -- layout -----------------------------------------------------------
    def reset(self, seed: int | None = None) -> EnvStep:
        s = self.spec
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        if s.layout is not None:
            cells = [tuple(map(int, c)) for c in s.layout]
        else:
            flat = self._rng.choice(s.size * s.size, size=s.n_agents + 1, replace=False)
            cells = [(int(i) // s.size, int(i) % s.size) for i in flat]
        self.hunters = cells[:-1]
        self.prey = cells[-1]
        self._t = 0
        self._done = False
        return self._observe_all()

    # -- masks and observations --------------------------------------------
    def _in_grid(self, cell) -> bool:
        n = self.spec.size
        return 0 <= cell[0] < n and 0 <= cell[1] < n

    def avail_actions(self) -> np.ndarray:
        avail = np.zeros((self.n_agents, 6), dtype=bool)
        for a, (r, c) in enumerate(self.hunters):
            for u, (dr, dc) in enumerate(_DELTAS):
                cell = (r + dr, c + dc)
                avail[a, u] = self._in_grid(cell) and cell != self.prey
            avail[a, STAY] = True
            avail[a, TAG] = _manhattan((r, c), self.prey) == 1
        return avail

    def observe(self, agent_id: int) -> np.ndarray:
        self._check_agent(agent_id)
        s = self.spec
        me = self.hunters[agent_id]
        scale = float(s.size - 1)
        obs = [me[0] / scale, me[1] / scale]
        others = [self.prey] + [h for i, h in enumerate(self.hunters) if i != agent_id]
        for other in others:
            if _chebyshev(me, other) <= s.sight_radius:
                obs += [1.0, float(other[0] - me[0]), float(other[1] - me[1])]
            else:
                obs += [0.0, 0.0, 0.0]
        return np.asarray(obs)

    def get_state(self) -> np.ndarray:
        scale = float(self.spec.size - 1)
        coords = [x / scale for cell in (*self.hunters, self.prey) for x in cell]
        return np.asarray(coords + [self._t / self.episode_limit])

    def _observe_all(self, **kw) -> EnvStep:
        obs = np.stack([self.observe(a) for a in range(self.n_agents)])
        return EnvStep(obs, self.get_state(), self.avail_actions(), t=self._t, **kw)

    # -- dynamics -------------------------------------------------------------
    def _flee(self) -> tuple[int, int]:
        occupied = set(self.hunters)
        best, best_score = self.prey, -1
        for dr, dc in _DELTAS:  # lowest action id wins ties
            cell = (self.prey[0] + dr, self.prey[1] + dc)
            if not self._in_grid(cell) or cell in occupied:
                continue
            score = min(_manhattan(cell, h) for h in self.hunters)
            if score > best_score:
                best, best_score = cell, score
        return best

    def step(self, actions) -> EnvStep:
        if self._done:
            raise EnvError("step() called on a finished episode; call reset()")
        s = self.spec
        u = self._check_actions(actions, self.avail_actions(), self._t)
        moved = []
        for (r, c), a in zip(self.hunters, u):
            dr, dc = _DELTAS[a] if a != TAG else (0, 0)
            moved.append((r + dr, c + dc))
        self.hunters = moved
        adjacent = sum(_manhattan(h, self.prey) == 1 for h in moved)
        captured = bool(np.any(u == TAG)) and adjacent >= s.min_taggers
        reward = s.step_reward + (s.capture_reward if captured else 0.0)
        if not captured:
            self.prey = self._flee()
        self._t += 1
        truncated = not captured and self._t >= s.episode_limit
        self._done = captured or truncated
        return self._observe_all(reward=reward, terminated=captured, won=captured, truncated=truncated)


def pursuit_optimal_return(spec: PursuitGridSpec, layout=None, seed: int = 0) -> float:
    """Return of the best centralized joint policy, by BFS over joint positions.

    Dynamics are deterministic, so the best return is ``capture_reward +
    k * step_reward`` for the smallest capture step ``k``.  Hunters are
    interchangeable, so joint states are canonicalised by sorting.
    """
    n = spec.size
    if n > 7 or spec.n_agents != 3:
        raise EnvError("BFS oracle supports at most a 7x7 grid with 3 hunters")
    if layout is None:
        env = PursuitGrid(spec)
        env.reset(seed=seed)
        layout = (*env.hunters, env.prey)
    cells = n * n
    coords = np.array([(i // n, i % n) for i in range(cells)])
    move = np.full((cells, 5), -1, dtype=np.int64)
    for i, (r, c) in enumerate(coords):
        for m, (dr, dc) in enumerate(_DELTAS):
            rr, cc = r + dr, c + dc
            if 0 <= rr < n and 0 <= cc < n:
                move[i, m] = rr * n + cc
    dist = np.abs(coords[:, None, :] - coords[None, :, :]).sum(-1)
    combos = np.array(np.meshgrid(range(5), range(5), range(5), indexing="ij")).reshape(3, -1).T

    def encode(h, p):
        return ((h[:, 0] * cells + h[:, 1]) * cells + h[:, 2]) * cells + p

    h0 = np.sort(np.array([[r * n + c for r, c in layout[:3]]]), axis=1)
    p0 = np.array([layout[3][0] * n + layout[3][1]])
    visited = np.zeros(cells**4, dtype=bool)
    visited[encode(h0, p0)] = True
    frontier_h, frontier_p = h0, p0
    for depth in range(1, spec.episode_limit + 1):
        next_h, next_p = [], []
        for start in range(0, len(frontier_p), 4096):
            H = frontier_h[start : start + 4096]
            P = frontier_p[start : start + 4096]
            k = len(P)
            # candidate hunter cells for every (state, move combo)
            nh = move[H[:, None, :], combos[None, :, :]]  # (k, 125, 3)
            Pk = np.broadcast_to(P[:, None, None], nh.shape)
            ok = np.all((nh >= 0) & (nh != Pk), axis=2)
            adj_start = dist[H, P[:, None]] == 1  # (k, 3)
            can_tag = np.any((combos[None, :, :] == STAY) & adj_start[:, None, :], axis=2)
            adj_after = (dist[np.where(nh >= 0, nh, 0), Pk] == 1) & (nh >= 0)
            if np.any(ok & can_tag & (adj_after.sum(axis=2) >= spec.min_taggers)):
                return float(spec.capture_reward + depth * spec.step_reward)
            nh = nh[ok]
            Pr = np.broadcast_to(P[:, None], (k, len(combos)))[ok]
            # prey flees
            pc = move[Pr]  # (m, 5)
            blocked = (pc[:, :, None] == nh[:, None, :]).any(axis=2) | (pc < 0)
            score = dist[np.where(pc >= 0, pc, 0)[:, :, None], nh[:, None, :]].min(axis=2)
            score = np.where(blocked, -1, score)
            new_p = pc[np.arange(len(pc)), np.argmax(score, axis=1)]
            nh = np.sort(nh, axis=1)
            keys = encode(nh, new_p)
            keys, first = np.unique(keys, return_index=True)
            fresh = ~visited[keys]
            visited[keys[fresh]] = True
            next_h.append(nh[first[fresh]])
            next_p.append(new_p[first[fresh]])
        frontier_h = np.concatenate(next_h) if next_h else np.zeros((0, 3), dtype=np.int64)
        frontier_p = np.concatenate(next_p) if next_p else np.zeros(0, dtype=np.int64)
        if len(frontier_p) == 0:
            break
    return float(spec.episode_limit * spec.step_reward)


# ---------------------------------------------------------------------------
# two-state enumerable game


@dataclass(frozen=True)
class TwoStateSpec:
    horizon: int = 3
    # reward[s][u0][u1]
    reward: tuple = (((1.0, 0.0), (0.0, 2.0)), ((0.5, -1.0), (-1.0, 3.0)))
    # probability of landing in state 1 from (s, u0, u1)
    p_next1: tuple = (((0.2, 0.6), (0.5, 0.9)), ((0.3, 0.7), (0.4, 0.1)))
    p_init1: float = 0.4
    name: str = "twostate"


class TwoStateGame(_Env):
    """Two agents, two actions, two hidden states; only agent 0 sees the state.

    The episode ends after ``horizon`` steps (a finite-horizon game, so the
    last step counts as terminal).
    """

    def __init__(self, spec: TwoStateSpec | None = None, seed: int | None = None):
        self.spec = spec or TwoStateSpec()
        self.n_agents = 2
        self.n_actions = 2
        self.obs_dim = 3
        self.state_dim = 2
        self.episode_limit = self.spec.horizon
        self._rng = np.random.default_rng(seed)
        self._s = 0
        self._t = 0
        self._done = True

    def reset(self, seed: int | None = None) -> EnvStep:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._s = int(self._rng.random() < self.spec.p_init1)
        self._t = 0
        self._done = False
        return self._observe_all()

    def observe(self, agent_id: int) -> np.ndarray:
        self._check_agent(agent_id)
        return self.model_observations(self._s)[agent_id]

    def get_state(self) -> np.ndarray:
        return self.model_state_vector(self._s)

    def avail_actions(self) -> np.ndarray:
        return self.model_avail(self._s)

    def _observe_all(self, **kw) -> EnvStep:
        return EnvStep(self.model_observations(self._s), self.get_state(), self.avail_actions(), t=self._t, **kw)

    def step(self, actions) -> EnvStep:
        if self._done:
            raise EnvError("step() called on a finished episode; call reset()")
        u = self._check_actions(actions, self.avail_actions(), self._t)
        reward = float(self.spec.reward[self._s][u[0]][u[1]])
        p1 = self.spec.p_next1[self._s][u[0]][u[1]]
        self._s = int(self._rng.random() < p1)
        self._t += 1
        done = self._t >= self.spec.horizon
        self._done = done
        return self._observe_all(reward=reward, terminated=done, won=False)

    def model_initial(self):
        p = self.spec.p_init1
        return [(1.0 - p, 0), (p, 1)]

    def model_step(self, state, joint_action):
        reward = float(self.spec.reward[state][joint_action[0]][joint_action[1]])
        p1 = self.spec.p_next1[state][joint_action[0]][joint_action[1]]
        # terminal flag is resolved by the enumerator from the horizon
        return [(1.0 - p1, 0, reward, False), (p1, 1, reward, False)]

    def model_observations(self, state) -> np.ndarray:
        return np.array([[1.0, float(state == 0), float(state == 1)], [1.0, 0.0, 0.0]])

    def model_state_vector(self, state) -> np.ndarray:
        return np.array([float(state == 0), float(state == 1)])

    def model_avail(self, state) -> np.ndarray:
        return np.ones((2, 2), dtype=bool)


# ---------------------------------------------------------------------------
# registry

_REGISTRY = {
    "climb": (MatrixGame, MatrixGameSpec),
    "pursuit7": (PursuitGrid, PursuitGridSpec),
    "twostate": (TwoStateGame, TwoStateSpec),
}
ENV_NAMES = tuple(_REGISTRY)


def _coerce(value, target):
    if isinstance(value, str):
        if isinstance(target, bool):
            return value.strip().lower() in ("1", "true", "yes")
        if isinstance(target, int):
            return int(value)
        if isinstance(target, float):
            return float(value)
    return value


def env_spec_from_config(name: str, overrides: dict | None = None):
    if name not in _REGISTRY:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(_REGISTRY)}")
    _, spec_cls = _REGISTRY[name]
    spec = spec_cls()
    if overrides:
        valid = {f.name for f in fields(spec_cls)}
        unknown = sorted(set(overrides) - valid)
        if unknown:
            raise KeyError(f"unknown env field(s) for {name}: {unknown}")
        spec = replace(spec, **{k: _coerce(v, getattr(spec, k)) for k, v in overrides.items()})
    return spec


def make_env(spec_or_name, seed: int | None = None, **overrides):
    if isinstance(spec_or_name, str):
        spec = env_spec_from_config(spec_or_name, overrides)
    else:
        spec = spec_or_name
    for env_cls, spec_cls in _REGISTRY.values():
        if isinstance(spec, spec_cls):
            return env_cls(spec, seed=seed)
    raise TypeError(f"unsupported environment spec {spec!r}")


def optimal_return(spec, seed: int = 0) -> float:
    """Best achievable episode return; pursuit layouts come from ``spec.layout`` or ``reset(seed)``."""
    if isinstance(spec, MatrixGameSpec):
        return float(np.max(spec.payoff))
    if isinstance(spec, PursuitGridSpec):
        return pursuit_optimal_return(spec, spec.layout, seed=seed)
    raise EnvError(f"no optimal-return oracle for {type(spec).__name__}")
