"""Tabular personalised meta-RL: alternating personalised/auxiliary updates and aggregation.

Per round every task copies the meta table into its auxiliary table, then
alternates ``R`` times between (a) ``K`` episodes of regularised sampled TD
updates on its personalised table and (b) one auxiliary step pulling the
auxiliary table toward the personalised one.  The round ends by blending the
meta table with the mean of the auxiliary tables.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .envs import TabularTask, TaskFamily, sample_initial
from .errors import InvalidParameter, InvalidState
from .metrics import MetricsRecord
from .qcore import GREEDY, MetaQTable, PolicySpec, QTable, TableLike, _vals, evaluate_return, select_action
from .streams import eval_stream, explore_stream

ETA_TOL = 1e-12


@dataclass(frozen=True)
class PersonalizationConfig:
    """Hyperparameters of one training run.

    ``C`` rounds, ``R`` alternations per round, ``K`` collected episodes per
    alternation (each at most ``horizon`` transitions, updates applied in
    collection order), ``M`` next-state draws averaged per TD target.
    Exploration is epsilon-greedy on the personalised table with epsilon
    annealed linearly from ``epsilon_start`` to ``epsilon_finish`` over the
    rounds, unless ``exploration`` is ``boltzmann``.
    """

    lam: float = 10.0
    eta_personalized: float = 1e-3
    eta_aux: float = 1e-3
    beta: float = 1.0
    C: int = 10
    R: int = 3
    K: int = 1
    M: int = 1
    horizon: int = 50
    exploration: str = "epsilon-greedy"
    epsilon_start: float = 0.3
    epsilon_finish: float = 0.01
    temperature: float = 1.0
    eta_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidParameter(f"lambda must be >= 0, got {self.lam}")
        if self.eta_personalized <= 0 or self.eta_aux < 0:
            raise InvalidParameter("step sizes must be positive")
        if self.eta_aux * self.lam > 1 + ETA_TOL:
            raise InvalidParameter(f"eta_aux*lambda = {self.eta_aux * self.lam:g} > 1 overshoots")
        if not 0.0 <= self.beta <= 1.0:
            raise InvalidParameter(f"beta must lie in [0, 1], got {self.beta}")
        if self.C < 0 or min(self.R, self.K, self.M, self.horizon) < 1:
            raise InvalidParameter("C >= 0 and R, K, M, horizon >= 1 required")
        if self.eta_decay < 0:
            raise InvalidParameter("eta_decay must be >= 0")
        self.policy(1)  # validates exploration settings

    def epsilon(self, round_: int) -> float:
        if self.C <= 1:
            return self.epsilon_start
        frac = (round_ - 1) / (self.C - 1)
        return self.epsilon_start + (self.epsilon_finish - self.epsilon_start) * frac

    def policy(self, round_: int) -> PolicySpec:
        if self.exploration == "boltzmann":
            return PolicySpec("boltzmann", temperature=self.temperature)
        if self.exploration == "greedy":
            return GREEDY
        if self.exploration != "epsilon-greedy":
            raise InvalidParameter(f"unknown exploration {self.exploration!r}")
        return PolicySpec("epsilon-greedy", epsilon=min(max(self.epsilon(round_), 0.0), 1.0))

    def eta_at(self, k: int) -> float:
        """Personalised step size for the ``k``-th update of a task (0-based)."""
        if self.eta_decay == 0:
            return self.eta_personalized
        return self.eta_personalized / (1.0 + k * self.eta_decay)


@dataclass(frozen=True)
class EvalSpec:
    episodes: int = 100
    horizon: int = 100


@dataclass
class TrainingState:
    meta: MetaQTable
    personalized: list[QTable]
    auxiliary: list[QTable]
    round: int = 0
    updates: list[int] = field(default_factory=list)

    @classmethod
    def initial(cls, family: TaskFamily) -> "TrainingState":
        return cls(MetaQTable.zeros(family),
                   [QTable.zeros(t) for t in family],
                   [QTable.zeros(t) for t in family],
                   0, [0] * len(family))

    def copy(self) -> "TrainingState":
        return TrainingState(self.meta.copy(), [q.copy() for q in self.personalized],
                             [q.copy() for q in self.auxiliary], self.round, list(self.updates))

    def check(self, family: TaskFamily):
        self.meta.check(family)
        if len(self.personalized) != len(family) or len(self.auxiliary) != len(family):
            raise InvalidState("one personalised and one auxiliary table per task required")
        for t, p, x in zip(family, self.personalized, self.auxiliary):
            p.check(t)
            x.check(t)


# --------------------------------------------------------------------------- single updates


def _check_step(eta: float, lam: float):
    if lam < 0:
        raise InvalidParameter(f"lambda must be >= 0, got {lam}")
    if eta <= 0 or eta * (1.0 + lam) > 1.0 + ETA_TOL:
        raise InvalidParameter(f"need 0 < eta*(1+lambda) <= 1, got eta={eta:g}, lambda={lam:g}")


def _regularized_td(q: float, aux: float, target: float, eta: float, lam: float) -> float:
    return q + eta * (target - q) + eta * lam * (aux - q)


def personalized_step_sampled(Q_pers: TableLike, Q_aux: TableLike, sample, eta: float, lam: float,
                              gamma: float) -> float:
    """Regularised TD update of one entry from sampled successors.

    ``sample`` is ``(s, a, r, next_states)``; the target is
    ``r + gamma * mean(max_a' Q_pers[s', a'])`` over the listed successors.
    Writes the new value into ``Q_pers`` and returns it.
    """
    _check_step(eta, lam)
    s, a, r, nexts = sample
    nexts = np.atleast_1d(np.asarray(nexts, dtype=np.int64))
    if nexts.size == 0:
        raise InvalidParameter("sample needs at least one next state")
    q = _vals(Q_pers)
    target = r + gamma * float(q[nexts].max(axis=1).mean())
    new = _regularized_td(float(q[s, a]), float(_vals(Q_aux)[s, a]), target, eta, lam)
    q[s, a] = new
    return new


def personalized_step_exact(Q_pers: TableLike, Q_aux: TableLike, task: TabularTask, s: int, a: int,
                            eta: float, lam: float) -> float:
    """Same update with the exact expectation over the transition kernel."""
    _check_step(eta, lam)
    task.check_index(s, a)
    q = _vals(Q_pers)
    v_next = q[task.next_states[s, a]].max(axis=1)
    target = float(task.rewards[s, a] + task.gamma * np.dot(task.next_probs[s, a], v_next))
    new = _regularized_td(float(q[s, a]), float(_vals(Q_aux)[s, a]), target, eta, lam)
    q[s, a] = new
    return new


def sweep_exact(task: TabularTask, q: np.ndarray, aux: np.ndarray, eta: float, lam: float) -> np.ndarray:
    """Synchronous exact update of every entry."""
    _check_step(eta, lam)
    return _regularized_td(q, aux, exact_targets(task, q), eta, lam)


def sweep_sampled(task: TabularTask, q: np.ndarray, aux: np.ndarray, eta: float, lam: float, M: int,
                  rng: np.random.Generator) -> np.ndarray:
    """Synchronous update of every entry from ``M`` sampled successors each."""
    _check_step(eta, lam)
    return _regularized_td(q, aux, sampled_targets(task, q, M, rng), eta, lam)


def exact_targets(task: TabularTask, q: np.ndarray) -> np.ndarray:
    return task.rewards + task.gamma * task.expect(q.max(axis=1))


def sampled_targets(task: TabularTask, q: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    """TD targets for every entry, each averaging ``M`` sampled successors."""
    S, A = task.shape
    s_idx = np.broadcast_to(np.arange(S)[:, None, None], (S, A, M))
    a_idx = np.broadcast_to(np.arange(A)[None, :, None], (S, A, M))
    nxt = task.sample_next(s_idx, a_idx, rng.random((S, A, M)))
    return task.rewards + task.gamma * q.max(axis=1)[nxt].mean(axis=-1)


def auxiliary_step(Q_aux: TableLike, Q_pers: TableLike, eta_aux: float, lam: float) -> QTable:
    if eta_aux < 0 or lam < 0 or eta_aux * lam > 1.0 + ETA_TOL:
        raise InvalidParameter(f"need eta_aux*lambda <= 1, got {eta_aux:g}*{lam:g}")
    aux, pers = _vals(Q_aux), _vals(Q_pers)
    if aux.shape != pers.shape:
        raise InvalidState("auxiliary and personalised tables differ in shape")
    task_id = Q_aux.task_id if isinstance(Q_aux, QTable) else -1
    return QTable(task_id, aux + eta_aux * lam * (pers - aux))


def aggregate(meta: MetaQTable, auxiliaries: Sequence[TableLike], family: TaskFamily, beta: float) -> MetaQTable:
    """Blend the meta table with the per-key mean of the tasks that own each key."""
    if not 0.0 <= beta <= 1.0:
        raise InvalidParameter(f"beta must lie in [0, 1], got {beta}")
    meta.check(family)
    if len(auxiliaries) != len(family):
        raise InvalidState(f"{len(auxiliaries)} auxiliary tables for {len(family)} tasks")
    # running per-key mean in ascending task order: deterministic, and exact when all tables agree
    mean = np.zeros(family.n_keys)
    seen = np.zeros(family.n_keys)
    for i, aux in enumerate(auxiliaries):
        vals = _vals(aux)
        idx = family.key_index[i]
        if vals.shape != idx.shape:
            raise InvalidState(f"auxiliary table {i} has shape {vals.shape}, task has {idx.shape}")
        seen[idx] += 1
        mean[idx] += (vals - mean[idx]) / seen[idx]
    return MetaQTable((1.0 - beta) * meta.values + beta * mean)


# --------------------------------------------------------------------------- data collection


def collect_episode(task: TabularTask, q: np.ndarray, spec: PolicySpec, rng: np.random.Generator,
                    horizon: int, M: int = 1) -> Iterator[tuple[int, int, float, np.ndarray]]:
    """Yield ``(s, a, r, next_states)`` along one exploration episode.

    Actions are chosen from ``q`` as it is at that moment, so a caller that
    updates ``q`` in place between yields gets on-line behaviour.  The walk
    follows the first successor; the other ``M - 1`` are extra draws for the
    TD target only.
    """
    s = int(sample_initial(task, rng))
    for _ in range(horizon):
        if task.absorbing[s]:
            return
        a = select_action(q, s, spec, rng)
        nexts = task.sample_next(s, a, rng.random(M))
        yield s, a, float(task.rewards[s, a]), nexts
        s = int(nexts[0])


def distance_sq(state: TrainingState, family: TaskFamily) -> float:
    """Mean over tasks of the squared distance between personalised and meta tables on owned keys."""
    total = 0.0
    for i, pers in enumerate(state.personalized):
        diff = pers.values - state.meta.values[family.key_index[i]]
        total += float((diff * diff).sum())
    return total / len(family)


def evaluate_tables(family: TaskFamily, tables: Sequence[np.ndarray], evaluation: EvalSpec, seed: int,
                    round_: int) -> tuple[float, ...]:
    """Greedy return of each task's table, using the shared evaluation streams."""
    out = []
    for task, q in zip(family, tables):
        mean, _ = evaluate_return(task, q, GREEDY, evaluation.episodes, evaluation.horizon,
                                  eval_stream(seed, task.id, round_))
        out.append(mean)
    return tuple(out)


# --------------------------------------------------------------------------- training loop

Diagnostics = Callable[[TrainingState, TaskFamily, "PersonalizationConfig"], dict]


def run_training(family: TaskFamily, config: PersonalizationConfig, seed: int | None = None, *,
                 evaluation: EvalSpec | None = None,
                 diagnostics: Diagnostics | None = None,
                 sink: Callable[[MetricsRecord], None] | None = None,
                 checkpoint: Callable[[TrainingState], None] | None = None,
                 checkpoint_every: int = 0,
                 record_timing: bool = False,
                 on_round: Callable[[int, TrainingState, dict], None] | None = None,
                 ) -> tuple[TrainingState, list[MetricsRecord]]:
    """Run the alternating optimisation for ``config.C`` rounds.

    Randomness: task ``i`` in round ``c`` explores with the stream
    ``(seed, "explore", task.id, c)``; evaluations use ``(seed, "eval", task.id, c)``.
    ``diagnostics`` may return extra record fields (gradient norm, bound).
    ``on_round`` sees each round's per-task trace (used by the telescoping
    check and tests).
    """
    seed = config.seed if seed is None else seed
    _check_step(config.eta_at(0), config.lam)
    state = TrainingState.initial(family)
    records: list[MetricsRecord] = []
    lam, eta_aux = config.lam, config.eta_aux
    for c in range(1, config.C + 1):
        t0 = time.perf_counter()
        spec = config.policy(c)
        auxes, residual = [], 0.0
        trace = {"aux": [], "pers": []}
        for i, task in enumerate(family):
            meta_slice = state.meta.values[family.key_index[i]]
            pers = state.personalized[i].values
            aux = meta_slice.copy()
            rng = explore_stream(seed, task.id, c)
            z_sum = np.zeros_like(aux)
            keep = on_round is not None
            aux_hist, pers_hist = ([aux.copy()] if keep else None), []
            for _ in range(config.R):
                for _ in range(config.K):
                    for s, a, r, nexts in collect_episode(task, pers, spec, rng, config.horizon, config.M):
                        personalized_step_sampled(pers, aux, (s, a, r, nexts), config.eta_at(state.updates[i]),
                                                  lam, task.gamma)
                        state.updates[i] += 1
                z_sum += lam * (aux - pers)
                aux = auxiliary_step(aux, pers, eta_aux, lam).values
                if keep:
                    aux_hist.append(aux.copy())
                    pers_hist.append(pers.copy())
            residual = max(residual, float(np.abs((meta_slice - aux) - eta_aux * z_sum).max()))
            state.auxiliary[i] = QTable(task.id, aux)
            auxes.append(aux)
            trace["aux"].append(aux_hist)
            trace["pers"].append(pers_hist)
        state.meta = aggregate(state.meta, auxes, family, config.beta)
        state.round = c
        trace["telescoping_residual"] = residual
        if on_round is not None:
            on_round(c, state, trace)

        rec = MetricsRecord(seed=seed, round=c, algorithm="pmeta", lam=float(lam),
                            distance=distance_sq(state, family), telescoping_residual=residual)
        if evaluation is not None:
            rec.pers_returns = evaluate_tables(family, [p.values for p in state.personalized], evaluation, seed, c)
            rec.meta_returns = evaluate_tables(
                family, [state.meta.values[idx] for idx in family.key_index], evaluation, seed, c)
        if diagnostics is not None:
            for k, v in diagnostics(state, family, config).items():
                setattr(rec, k, v)
        if record_timing:
            rec.wall_clock = time.perf_counter() - t0
        records.append(rec)
        if sink is not None:
            sink(rec)
        if checkpoint is not None and checkpoint_every and c % checkpoint_every == 0:
            checkpoint(state)
    return state, records
