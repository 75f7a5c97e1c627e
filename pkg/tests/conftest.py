import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vdac import autodiff as ad
from vdac.agents import PolicyOutput

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class TablePolicy:
    """Stand-in actor with a fixed per-agent action distribution (ignores history)."""

    def __init__(self, probs, n_agents=2):
        self.table = np.asarray(probs, dtype=float)
        if self.table.ndim == 1:
            self.table = np.tile(self.table, (n_agents, 1))
        self.n_agents, self.n_actions = self.table.shape
        self.hidden_dim = 1

    def init_hidden(self, rows):
        return ad.Tensor(np.zeros((rows, 1)))

    def __call__(self, obs, prev_actions, agent_ids, hidden, avail_mask, t=None):
        ids = np.asarray(agent_ids).reshape(-1)
        p = self.table[ids] * np.asarray(avail_mask, dtype=bool).reshape(len(ids), -1)
        p = p / p.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore"):
            logp = np.where(p > 0, np.log(p), 0.0)
        return PolicyOutput(ad.Tensor(p), ad.Tensor(logp), ad.Tensor(np.zeros(len(ids))), hidden)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
