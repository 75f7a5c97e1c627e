"""Bootstrapped return targets and advantages over time-major padded batches.

All functions take ``rewards``, ``terminated`` and ``filled`` of shape
``(T, E)`` and ``values`` of shape ``(T + 1, E)`` or ``(T + 1, E, N)``;
``values[t]`` estimates the state reached before step ``t``.  An episode's
last filled step bootstraps from ``values`` one slot later, scaled by
``1 - terminated`` so true terminals contribute nothing.
"""

from __future__ import annotations

import numpy as np


def _prepare(rewards, values, terminated, filled):
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    term = np.asarray(terminated, dtype=np.float64)
    mask = np.asarray(filled, dtype=np.float64)
    if v.shape[0] != r.shape[0] + 1:
        raise ValueError(f"values need T+1={r.shape[0] + 1} slots, got {v.shape[0]}")
    extra = v.ndim - r.ndim
    if extra:
        r, term, mask = (x.reshape(x.shape + (1,) * extra) for x in (r, term, mask))
    last = mask.copy()
    last[:-1] *= 1.0 - mask[1:]
    return r, v, term, mask, last


def nstep_targets(rewards, values, terminated, filled, gamma: float) -> np.ndarray:
    """``y_t = r_t + gamma * y_{t+1}``, seeded with ``V(s_L) * (1 - terminated)`` at each episode end."""
    r, v, term, mask, last = _prepare(rewards, values, terminated, filled)
    T = r.shape[0]
    y = np.zeros(np.broadcast_shapes(r.shape, v[:-1].shape))
    nxt = np.zeros_like(y[0])
    for t in range(T - 1, -1, -1):
        cont = np.where(last[t] > 0, v[t + 1], nxt)
        y[t] = mask[t] * (r[t] + gamma * (1.0 - term[t]) * cont)
        nxt = y[t]
    return y


def lambda_targets(rewards, values, terminated, filled, gamma: float, lam: float) -> np.ndarray:
    """TD(lambda) return ``G_t = r_t + gamma * ((1 - lam) V(s_{t+1}) + lam G_{t+1})``."""
    r, v, term, mask, last = _prepare(rewards, values, terminated, filled)
    T = r.shape[0]
    y = np.zeros(np.broadcast_shapes(r.shape, v[:-1].shape))
    nxt = np.zeros_like(y[0])
    for t in range(T - 1, -1, -1):
        blend = (1.0 - lam) * v[t + 1] + lam * nxt
        cont = np.where(last[t] > 0, v[t + 1], blend)
        y[t] = mask[t] * (r[t] + gamma * (1.0 - term[t]) * cont)
        nxt = y[t]
    return y


def td_advantage(targets, values) -> np.ndarray:
    """``A = y - V``, always returned as a constant array (no gradient path)."""
    v = getattr(values, "data", values)
    return np.asarray(targets, dtype=np.float64) - np.asarray(v, dtype=np.float64)
