"""Q-tables, Bellman operators, fixed points, policies and return estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .envs import TabularTask, TaskFamily, sample_initial
from .errors import InvalidIndex, InvalidParameter, InvalidState, NonConvergence

DEFAULT_TOL = 1e-10


@dataclass
class QTable:
    """Dense per-task Q-values, shape ``(n_states, n_actions)``."""

    task_id: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InvalidState("QTable values must be 2-D")
        if not np.isfinite(self.values).all():
            raise InvalidState("QTable values must be finite")

    @classmethod
    def zeros(cls, task: TabularTask) -> "QTable":
        return cls(task.id, np.zeros(task.shape))

    def copy(self) -> "QTable":
        return QTable(self.task_id, self.values.copy())

    def check(self, task: TabularTask):
        if self.values.shape != task.shape:
            raise InvalidState(f"Q-table shape {self.values.shape} does not match task {task.id} {task.shape}")


@dataclass
class MetaQTable:
    """Meta Q-values over a family's union keys (``values[k]`` <-> ``family.union_keys[k]``)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise InvalidState("MetaQTable values must be 1-D over union keys")
        if not np.isfinite(self.values).all():
            raise InvalidState("MetaQTable values must be finite")

    @classmethod
    def zeros(cls, family: TaskFamily) -> "MetaQTable":
        return cls(np.zeros(family.n_keys))

    def copy(self) -> "MetaQTable":
        return MetaQTable(self.values.copy())

    def check(self, family: TaskFamily):
        if self.values.shape != (family.n_keys,):
            raise InvalidState(f"meta table has {self.values.size} keys, family has {family.n_keys}")

    def slice_for(self, family: TaskFamily, i: int) -> QTable:
        """The meta values restricted to task ``i``'s own state-action pairs."""
        self.check(family)
        return QTable(family.tasks[i].id, self.values[family.key_index[i]])

    def as_dict(self, family: TaskFamily) -> dict:
        return dict(zip(family.union_keys, self.values.tolist()))


TableLike = Union[QTable, "MetaQTable", np.ndarray]


def _vals(q: TableLike) -> np.ndarray:
    return q.values if isinstance(q, (QTable, MetaQTable)) else np.asarray(q, dtype=np.float64)


@dataclass(frozen=True)
class PolicySpec:
    """How actions are drawn from a Q-table.

    kind is ``greedy``, ``epsilon-greedy`` or ``boltzmann``.  Greedy ties go
    to the lowest action index.
    """

    kind: str = "greedy"
    epsilon: float = 0.0
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in ("greedy", "epsilon-greedy", "boltzmann"):
            raise InvalidParameter(f"unknown policy kind {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise InvalidParameter(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.temperature <= 0:
            raise InvalidParameter(f"temperature must be positive, got {self.temperature}")


GREEDY = PolicySpec("greedy")


# --------------------------------------------------------------------------- operators


def bellman_operator(task: TabularTask, q: TableLike) -> np.ndarray:
    """Optimal Bellman operator applied to every ``(s, a)``."""
    v = _vals(q).max(axis=1)
    return task.rewards + task.gamma * task.expect(v)


def regularized_operator(task: TabularTask, q: TableLike, meta_slice: TableLike, lam: float) -> np.ndarray:
    """Blend of the meta slice and the Bellman backup; a ``gamma/(1+lam)`` contraction."""
    if lam < 0:
        raise InvalidParameter(f"lambda must be >= 0, got {lam}")
    return (lam * _vals(meta_slice) + bellman_operator(task, q)) / (1.0 + lam)


def bellman_backup(task: TabularTask, Q: TableLike, s: int, a: int) -> float:
    task.check_index(s, a)
    q = _vals(Q)
    if q.shape != task.shape:
        raise InvalidState("Q-table does not match task")
    nxt = task.next_states[s, a]
    return float(task.rewards[s, a] + task.gamma * np.dot(task.next_probs[s, a], q[nxt].max(axis=1)))


def regularized_backup(task: TabularTask, Q: TableLike, Q_meta_slice: TableLike, lam: float,
                       s: int, a: int) -> float:
    if lam < 0:
        raise InvalidParameter(f"lambda must be >= 0, got {lam}")
    backup = bellman_backup(task, Q, s, a)
    return lam / (1.0 + lam) * float(_vals(Q_meta_slice)[s, a]) + backup / (1.0 + lam)


def iteration_bound(kappa: float, span: float, tol: float) -> int:
    """Iterations after which a kappa-contraction started ``span`` away is within ``tol``."""
    if span <= tol * (1 - kappa) or kappa == 0.0:
        return 1
    return int(math.ceil(math.log(tol * (1 - kappa) / span) / math.log(kappa)))


def solve_fixed_point(task: TabularTask, Q_meta_slice: TableLike, lam: float, tol: float = DEFAULT_TOL,
                      max_iter: int | None = None, init: TableLike | None = None) -> QTable:
    """Iterate the regularised operator until its sup-norm residual is at most ``tol``."""
    if tol <= 0:
        raise InvalidParameter("tol must be positive")
    if lam < 0:
        raise InvalidParameter(f"lambda must be >= 0, got {lam}")
    meta = _vals(Q_meta_slice)
    if meta.shape != task.shape:
        raise InvalidState("meta slice does not match task")
    q = np.zeros(task.shape) if init is None else _vals(init).copy()
    kappa = task.gamma / (1.0 + lam)
    if max_iter is None:
        first = regularized_operator(task, q, meta, lam)
        span = np.abs(first - q).max()
        max_iter = iteration_bound(kappa, span, tol) + 2
    for _ in range(max_iter + 1):
        nxt = regularized_operator(task, q, meta, lam)
        if np.abs(nxt - q).max() <= tol:
            return QTable(task.id, nxt)
        q = nxt
    raise NonConvergence(f"fixed point not reached in {max_iter} iterations (kappa={kappa:.4g})")


# --------------------------------------------------------------------------- policies


def greedy_actions(q: TableLike) -> np.ndarray:
    return _vals(q).argmax(axis=1)


def select_action(Q: TableLike, s: int, spec: PolicySpec, rng: np.random.Generator) -> int:
    q = _vals(Q)
    if not 0 <= int(s) < q.shape[0]:
        raise InvalidIndex(f"state {s} out of range ({q.shape[0]} states)")
    row = q[s]
    if spec.kind == "greedy":
        return int(row.argmax())
    if spec.kind == "epsilon-greedy":
        if rng.random() < spec.epsilon:
            return int(rng.integers(row.size))
        return int(row.argmax())
    z = np.exp((row - row.max()) / spec.temperature)
    cum = np.cumsum(z / z.sum())
    return int(min(np.searchsorted(cum, rng.random(), side="right"), row.size - 1))


def _select_batch(q: np.ndarray, states: np.ndarray, spec: PolicySpec, rng: np.random.Generator) -> np.ndarray:
    rows = q[states]
    greedy = rows.argmax(axis=1)
    if spec.kind == "greedy":
        return greedy
    n = states.size
    if spec.kind == "epsilon-greedy":
        explore = rng.random(n) < spec.epsilon
        random = rng.integers(q.shape[1], size=n)
        return np.where(explore, random, greedy)
    z = np.exp((rows - rows.max(axis=1, keepdims=True)) / spec.temperature)
    cum = np.cumsum(z / z.sum(axis=1, keepdims=True), axis=1)
    pick = (cum <= rng.random(n)[:, None]).sum(axis=1)
    return np.minimum(pick, q.shape[1] - 1)


def evaluate_return(task: TabularTask, Q: TableLike, spec: PolicySpec, n_episodes: int, horizon: int,
                    rng: np.random.Generator) -> tuple[float, float]:
    """Mean undiscounted episode return and its standard error.

    Episodes start from ``rho0`` and stop at the horizon or on entering an
    absorbing state.  All episodes are simulated side by side.
    """
    if n_episodes < 1 or horizon < 1:
        raise InvalidParameter("n_episodes and horizon must be >= 1")
    q = _vals(Q)
    if q.shape != task.shape:
        raise InvalidState("Q-table does not match task")
    states = np.asarray(sample_initial(task, rng, n_episodes))
    done = task.absorbing[states].copy()
    returns = np.zeros(n_episodes)
    for _ in range(horizon):
        if done.all():
            break
        actions = _select_batch(q, states, spec, rng)
        nxt = task.sample_next(states, actions, rng.random(n_episodes))
        returns += np.where(done, 0.0, task.rewards[states, actions])
        states = np.where(done, states, nxt)
        done |= task.absorbing[states]
    stderr = float(returns.std(ddof=1) / math.sqrt(n_episodes)) if n_episodes > 1 else 0.0
    return float(returns.mean()), stderr
