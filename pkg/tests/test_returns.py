import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vdac.returns import lambda_targets, nstep_targets, td_advantage


def brute_nstep(r, v_end, term, gamma):
    L = len(r)
    return np.array([sum(gamma**k * r[t + k] for k in range(L - t)) + gamma ** (L - t) * v_end * (1 - term)
                     for t in range(L)])


def brute_lambda(r, v, term, gamma, lam):
    """Weighted average of all n-step returns, with the remaining weight on the full return."""
    L = len(r)
    boot = [v[t] for t in range(L)] + [v[L] * (1 - term)]

    def n_step(t, n):
        return sum(gamma**k * r[t + k] for k in range(n)) + gamma**n * boot[t + n]

    out = []
    for t in range(L):
        H = L - t
        g = sum((1 - lam) * lam ** (n - 1) * n_step(t, n) for n in range(1, H))
        g += lam ** (H - 1) * n_step(t, H)
        out.append(g)
    return np.array(out)


def test_nstep_hand_example():
    # r = (1, 2), V(s_2) = 10, not terminal, gamma = .5: y_1 = 2 + 5, y_0 = 1 + .5 * 7
    y = nstep_targets([[1.0], [2.0]], [[0.0], [0.0], [10.0]], [[0.0], [0.0]], [[1.0], [1.0]], 0.5)
    np.testing.assert_allclose(y[:, 0], [4.5, 7.0])


def test_terminal_drops_bootstrap():
    y = nstep_targets([[1.0]], [[0.0], [99.0]], [[1.0]], [[1.0]], 0.9)
    assert y[0, 0] == 1.0


episodes = st.tuples(st.integers(1, 10), st.integers(0, 10**6), st.booleans(), st.floats(0.5, 1.0), st.floats(0, 1))


@given(episodes)
def test_targets_match_brute_force(ep):
    L, seed, term, gamma, lam = ep
    rng = np.random.default_rng(seed)
    r, v = rng.normal(size=L), rng.normal(size=L + 1)
    tm = np.zeros(L)
    tm[-1] = float(term)
    args = (r[:, None], v[:, None], tm[:, None], np.ones((L, 1)))
    np.testing.assert_allclose(nstep_targets(*args, gamma)[:, 0], brute_nstep(r, v[L], term, gamma), atol=1e-12)
    np.testing.assert_allclose(lambda_targets(*args, gamma, lam)[:, 0], brute_lambda(r, v, term, gamma, lam),
                               atol=1e-12)


def test_padding_and_agent_axis():
    # env 0 lasts 1 step, env 1 lasts 2; values carry an agent axis of 2
    r = np.array([[1.0, 1.0], [0.0, 3.0]])
    v = np.arange(12.0).reshape(3, 2, 2)
    term = np.array([[1.0, 0.0], [0.0, 0.0]])
    filled = np.array([[1.0, 1.0], [0.0, 1.0]])
    y = nstep_targets(r, v, term, filled, 1.0)
    assert y.shape == (2, 2, 2)
    np.testing.assert_array_equal(y[1, 0], 0.0)
    np.testing.assert_array_equal(y[0, 0], [1.0, 1.0])
    np.testing.assert_allclose(y[:, 1, 0], [1 + 3 + v[2, 1, 0], 3 + v[2, 1, 0]])
    assert np.all(td_advantage(y, v[:2])[1, 0] == -v[1, 0])


def test_lambda_limits():
    rng = np.random.default_rng(0)
    r, v = rng.normal(size=(6, 3)), rng.normal(size=(7, 3))
    tm, filled = np.zeros((6, 3)), np.ones((6, 3))
    one_step = r + 0.9 * v[1:]
    np.testing.assert_array_equal(lambda_targets(r, v, tm, filled, 0.9, 0.0), one_step)
    np.testing.assert_array_equal(lambda_targets(r, v, tm, filled, 0.9, 1.0), nstep_targets(r, v, tm, filled, 0.9))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        nstep_targets(np.zeros((3, 1)), np.zeros((3, 1)), np.zeros((3, 1)), np.ones((3, 1)), 0.9)
