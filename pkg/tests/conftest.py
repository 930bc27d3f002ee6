"""Shared fixtures and independent oracles.

The oracles deliberately avoid the package's operators: they rebuild the
dense kernel with explicit loops and solve with plain linear algebra.
"""

import numpy as np
import pytest

from pmetarl.envs import TabularTask, make_random_task


def dense_kernel(task):
    S, A = task.shape
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            for j, p in zip(task.next_states[s, a], task.next_probs[s, a]):
                P[s, a, j] += p
    return P


def policy_iteration(task, meta=None, lam=0.0):
    """Exact optimum of Q = (lam*meta + r + gamma*P max Q) / (1 + lam) by policy iteration.

    For a fixed greedy policy the equation is linear in Q, solved with
    ``np.linalg.solve`` over the S*A unknowns.
    """
    S, A = task.shape
    P = dense_kernel(task).reshape(S * A, S)
    r = task.rewards.reshape(-1)
    m = np.zeros(S * A) if meta is None else np.asarray(meta, float).reshape(-1)
    pi = np.zeros(S, dtype=int)
    for _ in range(1000):
        sel = np.zeros((S, S * A))
        sel[np.arange(S), np.arange(S) * A + pi] = 1.0
        lhs = (1.0 + lam) * np.eye(S * A) - task.gamma * P @ sel
        q = np.linalg.solve(lhs, lam * m + r).reshape(S, A)
        new = q.argmax(axis=1)
        if np.array_equal(new, pi):
            return q
        pi = new
    raise RuntimeError("policy iteration did not settle")


def value_iteration(task, tol=1e-13, max_iter=100000):
    """Plain value iteration on the dense kernel (lambda = 0)."""
    P = dense_kernel(task)
    q = np.zeros(task.shape)
    for _ in range(max_iter):
        new = task.rewards + task.gamma * P @ q.max(axis=1)
        if np.abs(new - q).max() < tol:
            return new
        q = new
    raise RuntimeError("value iteration did not converge")


def one_state_task(rewards, gamma=0.9, task_id=0, r_max=None):
    rewards = np.atleast_1d(np.asarray(rewards, float))
    A = rewards.size
    r_max = max(1.0, float(np.abs(rewards).max())) if r_max is None else r_max
    return TabularTask(task_id, ((0,),), np.zeros((1, A, 1), dtype=np.int64), np.ones((1, A, 1)),
                       rewards[None, :], gamma, np.ones(1), r_max)


def two_outcome_task(p=0.5, r=0.0, gamma=0.5):
    """State 0, one action, goes to state 1 or 2 with probs p, 1-p; 1 and 2 loop."""
    ns = np.array([[[1, 2]], [[1, 1]], [[2, 2]]])
    npr = np.array([[[p, 1 - p]], [[1.0, 0.0]], [[1.0, 0.0]]])
    rew = np.array([[r], [0.0], [0.0]])
    return TabularTask(0, ((0,), (1,), (2,)), ns, npr, rew, gamma, np.array([1.0, 0, 0]), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_tasks():
    g = np.random.default_rng(2024)
    return [make_random_task(int(g.integers(2, 9)), int(g.integers(1, 5)), g, gamma=0.9, task_id=i)
            for i in range(10)]


# --------------------------------------------------------------------------- acceptance report

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the one-line verdict of an acceptance criterion; all lines print at session end."""

    def record(n: int, passed: bool, detail: str):
        line = f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}"
        _CRITERIA[n] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
