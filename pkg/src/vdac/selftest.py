"""Fast property checks runnable from an installed package (``vdac selftest``)."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import autodiff as ad
from .critics import MixingNetwork, coma_advantage
from .enumeration import enumerate_trajectories, expected_score, trajectory_weights
from .envs import make_env
from .returns import lambda_targets, nstep_targets
from .seeding import ACTIONS, ENV, derive_seed, generator
from .trainer import ALGORITHMS, EnvInfo, Learner, TrainConfig, rollout

# narrow networks keep the per-coordinate finite-difference sweep short
SMALL_WIDTHS = dict(hidden_dim=8, mixer_embed=4, hypernet_hidden=8, critic_hidden=16)


def synthetic_learner(algorithm: str, seed: int = 0, **widths):
    """A learner and one 2-env batch from the 3-step two-agent game."""
    env_name = "twostate"
    config = TrainConfig(algorithm=algorithm, env_name=env_name, seed=seed, n_envs=2, **(widths or SMALL_WIDTHS))
    envs = [make_env(env_name, seed=derive_seed(seed, ENV, i)) for i in range(2)]
    learner = Learner(config, EnvInfo.of(envs[0]))
    if learner.target is not None:
        # desynchronise the target so a target/live mix-up shows up in the check
        rng = generator(seed, 99)
        for p in learner.target.params.values():
            p.data += rng.normal(scale=0.05, size=p.shape)
    batch = rollout(learner.actor, envs, [generator(seed, ACTIONS, i) for i in range(2)])
    return learner, batch


def loss_gradient_error(algorithm: str, seed: int = 0, h: float = 1e-5, **widths) -> float:
    """Worst relative error of the total-loss gradient against central differences."""
    learner, batch = synthetic_learner(algorithm, seed, **widths)
    _, _, frozen = learner.losses(batch)
    params = learner.all_params()
    return ad.grad_check(lambda: learner.losses(batch, frozen)[0], params, h=h)


def mixer_min_slope(n_draws: int, seed: int = 0, nonlinear: bool = True, h: float = 1e-6) -> float:
    """Smallest central-difference dV_tot/dV^a over random mixers, states and local values."""
    rng = np.random.default_rng(seed)
    worst = np.inf
    state_dim, n_agents = 5, 3
    with ad.no_grad():
        for _ in range(n_draws):
            mixer = MixingNetwork(state_dim, n_agents, embed_dim=8, hypernet_hidden=8, nonlinear=nonlinear, rng=rng)
            for p in mixer.params.values():
                p.data *= rng.uniform(0.5, 3.0)
            s = rng.normal(size=(1, state_dim))
            v = rng.normal(scale=3.0, size=(1, n_agents))
            for a in range(n_agents):
                up, dn = v.copy(), v.copy()
                up[0, a] += h
                dn[0, a] -= h
                slope = (mixer(up, s).item() - mixer(dn, s).item()) / (2 * h)
                worst = min(worst, slope)
    return float(worst)


def baseline_expectation(env_name: str, algorithm: str, seed: int) -> float:
    """max |E[sum_a grad log pi * V_tot]| over actor parameters, by exact enumeration."""
    env = make_env(env_name)
    enum = enumerate_trajectories(env)
    learner = Learner(TrainConfig(algorithm=algorithm, env_name=env_name, seed=seed), EnvInfo.of(env))
    weights = trajectory_weights(learner.actor, enum)
    base = learner.state_values(enum.batch)[: enum.batch.T]
    grads = expected_score(learner.actor, enum, base, weights)
    return max(float(np.abs(g).max()) for g in grads.values())


def coma_mean_advantage(n_draws: int, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_draws):
        U = int(rng.integers(2, 8))
        p = rng.dirichlet(np.ones(U))
        q = rng.normal(scale=5.0, size=U)
        mean = sum(p[u] * coma_advantage(q, p, u) for u in range(U))
        worst = max(worst, abs(mean))
    return worst


def _brute_nstep(r, v_last, term, gamma):
    return [sum(gamma**k * r[t + k] for k in range(len(r) - t)) + gamma ** (len(r) - t) * v_last * (1 - term)
            for t in range(len(r))]


def returns_max_error(n_episodes: int, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_episodes):
        L = int(rng.integers(1, 11))
        r = rng.normal(size=L)
        v = rng.normal(size=L + 1)
        term = float(rng.integers(0, 2))
        gamma = float(rng.uniform(0.5, 1.0))
        tm = np.zeros(L)
        tm[-1] = term
        y = nstep_targets(r[:, None], v[:, None], tm[:, None], np.ones((L, 1)), gamma)[:, 0]
        worst = max(worst, float(np.max(np.abs(y - _brute_nstep(r, v[L], term, gamma)))))
        # lambda = 1 reduces to the n-step target
        y1 = lambda_targets(r[:, None], v[:, None], tm[:, None], np.ones((L, 1)), gamma, 1.0)[:, 0]
        worst = max(worst, float(np.max(np.abs(y1 - y))))
    return worst


def _checks() -> list[tuple[str, Callable[[], float], float]]:
    return [
        ("loss gradients vs finite differences",
         lambda: max(loss_gradient_error(a, seed=1) for a in ALGORITHMS), 1e-5),
        ("mixer monotonicity (negated min slope)", lambda: -min(mixer_min_slope(50, 0, nl) for nl in (True, False)), 1e-8),
        ("baseline term vanishes (climb)",
         lambda: max(baseline_expectation("climb", a, 0) for a in ("vdac_sum", "vdac_mix", "naive_critic")), 1e-10),
        ("COMA advantage has zero mean", lambda: coma_mean_advantage(200), 1e-12),
        ("return targets vs brute force", lambda: returns_max_error(50), 1e-12),
    ]


def run_selftest(verbose: bool = True) -> bool:
    ok = True
    for name, fn, tol in _checks():
        t0 = time.perf_counter()
        value = fn()
        passed = value <= tol
        ok &= passed
        if verbose:
            print(f"{'PASS' if passed else 'FAIL'}  {name}: {value:.3g} (tol {tol:g}, {time.perf_counter() - t0:.1f}s)")
    return ok
