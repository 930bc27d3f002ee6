"""Comparison trainers: Q-table model averaging, independent and joint Q-learning.

All three share the round/alternation/episode skeleton of ``run_training``
and the same per-task exploration streams, so that with matching settings
their trajectories can be compared update by update.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .envs import TaskFamily
from .metrics import MetricsRecord
from .pmeta import EvalSpec, PersonalizationConfig, aggregate, collect_episode, evaluate_tables
from .qcore import MetaQTable, QTable
from .streams import explore_stream


def q_learning_update(q: np.ndarray, s: int, a: int, r: float, nexts, eta: float, gamma: float) -> float:
    """Plain Q-learning step toward ``r + gamma * mean(max Q(s', .))``."""
    target = r + gamma * float(q[np.atleast_1d(nexts)].max(axis=1).mean())
    q[s, a] = q[s, a] + eta * (target - q[s, a])
    return q[s, a]


def _train_tables(family, tables, config, seed, c, spec, counters):
    for i, task in enumerate(family):
        rng = explore_stream(seed, task.id, c)
        q = tables[i]
        for _ in range(config.R):
            for _ in range(config.K):
                for s, a, r, nexts in collect_episode(task, q, spec, rng, config.horizon, config.M):
                    q_learning_update(q, s, a, r, nexts, config.eta_at(counters[i]), task.gamma)
                    counters[i] += 1


def _finish(rec, sink, records, record_timing, t0):
    if record_timing:
        rec.wall_clock = time.perf_counter() - t0
    records.append(rec)
    if sink is not None:
        sink(rec)


def train_model_average(family: TaskFamily, config: PersonalizationConfig, seed: int | None = None, *,
                        evaluation: EvalSpec | None = None,
                        sink: Callable[[MetricsRecord], None] | None = None,
                        record_timing: bool = False):
    """Per-task Q-learning from the broadcast average, then a beta-blended average.

    Returns ``(meta, per-task tables, metrics)``.  ``lam`` in ``config`` is ignored.
    """
    seed = config.seed if seed is None else seed
    meta = MetaQTable.zeros(family)
    tables = [np.zeros(t.shape) for t in family]
    counters = [0] * len(family)
    records: list[MetricsRecord] = []
    for c in range(1, config.C + 1):
        t0 = time.perf_counter()
        tables = [meta.values[idx].copy() for idx in family.key_index]
        _train_tables(family, tables, config, seed, c, config.policy(c), counters)
        meta = aggregate(meta, tables, family, config.beta)
        rec = MetricsRecord(seed=seed, round=c, algorithm="model-average")
        if evaluation is not None:
            rec.pers_returns = evaluate_tables(family, tables, evaluation, seed, c)
            rec.meta_returns = evaluate_tables(family, [meta.values[idx] for idx in family.key_index],
                                               evaluation, seed, c)
        _finish(rec, sink, records, record_timing, t0)
    return meta, [QTable(t.id, q) for t, q in zip(family, tables)], records


def train_independent(family: TaskFamily, config: PersonalizationConfig, seed: int | None = None, *,
                      evaluation: EvalSpec | None = None,
                      sink: Callable[[MetricsRecord], None] | None = None,
                      record_timing: bool = False,
                      return_metrics: bool = False):
    """Uncoupled Q-learning per task; returns the per-task tables (and metrics on request)."""
    seed = config.seed if seed is None else seed
    tables = [np.zeros(t.shape) for t in family]
    counters = [0] * len(family)
    records: list[MetricsRecord] = []
    for c in range(1, config.C + 1):
        t0 = time.perf_counter()
        _train_tables(family, tables, config, seed, c, config.policy(c), counters)
        rec = MetricsRecord(seed=seed, round=c, algorithm="independent")
        if evaluation is not None:
            rec.pers_returns = evaluate_tables(family, tables, evaluation, seed, c)
        _finish(rec, sink, records, record_timing, t0)
    out = [QTable(t.id, q) for t, q in zip(family, tables)]
    return (out, records) if return_metrics else out


def train_joint(family: TaskFamily, config: PersonalizationConfig, seed: int | None = None, *,
                evaluation: EvalSpec | None = None,
                sink: Callable[[MetricsRecord], None] | None = None,
                record_timing: bool = False,
                return_metrics: bool = False):
    """One shared table over the union keys, fed episodes from every task round-robin."""
    seed = config.seed if seed is None else seed
    shared = np.zeros(family.n_keys)
    counter = 0
    records: list[MetricsRecord] = []
    for c in range(1, config.C + 1):
        t0 = time.perf_counter()
        spec = config.policy(c)
        rngs = [explore_stream(seed, t.id, c) for t in family]
        for _ in range(config.R):
            for _ in range(config.K):
                for i, task in enumerate(family):
                    idx = family.key_index[i]
                    view = shared[idx]  # a copy; only this task writes its keys during the episode
                    for s, a, r, nexts in collect_episode(task, view, spec, rngs[i], config.horizon, config.M):
                        q_learning_update(view, s, a, r, nexts, config.eta_at(counter), task.gamma)
                        shared[idx[s, a]] = view[s, a]
                        counter += 1
        rec = MetricsRecord(seed=seed, round=c, algorithm="joint")
        if evaluation is not None:
            rec.meta_returns = evaluate_tables(family, [shared[idx] for idx in family.key_index],
                                               evaluation, seed, c)
        _finish(rec, sink, records, record_timing, t0)
    meta = MetaQTable(shared)
    return (meta, records) if return_metrics else meta
