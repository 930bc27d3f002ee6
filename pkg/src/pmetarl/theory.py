"""Theory diagnostics: gradients of the personalisation objective, task-diversity
constants, the contraction check, the exact-vs-sampled gap and the distance bound.

The per-task objective has gradient ``lam * (Q_meta - Q*_i)`` where ``Q*_i`` is
the fixed point of the regularised operator anchored at ``Q_meta``.  The
distance bound compares the measured mean squared distance between
personalised and meta tables with

    2 delta^2 + 2 / (lam^2 - 8) * ||grad L||^2 + 2 sigma2_sq / lam^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .envs import TabularTask, TaskFamily
from .errors import BoundUndefined, InvalidParameter, InvalidState
from .pmeta import (PersonalizationConfig, TrainingState, _regularized_td, distance_sq, exact_targets,
                    sampled_targets)
from .qcore import DEFAULT_TOL, TableLike, _vals, regularized_operator, solve_fixed_point
from .streams import child_stream


@dataclass(frozen=True)
class DiversityConstants:
    """Reward/transition deviation bounds of a family and the derived variance terms.

    ``sigma2_sq`` is ``inf`` when ``lam**2 <= 8``; ``require_sigma2_sq`` raises then.
    """

    sigma1: tuple[float, ...]
    sigma2_tv: tuple[float, ...]
    sigma_sq: float
    sigma2_sq: float
    r_max: float
    gamma: float
    lam: float

    def require_sigma2_sq(self) -> float:
        if not math.isfinite(self.sigma2_sq):
            raise BoundUndefined(f"sigma2_sq needs lambda^2 > 8, got lambda={self.lam:g}")
        return self.sigma2_sq


@dataclass(frozen=True)
class BoundReport:
    round: int
    lhs: float
    rhs: float
    grad_norm_sq: float
    delta_est: float
    satisfied: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "satisfied", bool(self.lhs <= self.rhs))


def _check_lam(lam: float):
    if lam <= 0:
        raise InvalidParameter(f"lambda must be positive, got {lam}")


def _check_bound_lam(lam: float):
    if lam * lam <= 8:
        raise BoundUndefined(f"the distance bound needs lambda^2 > 8, got lambda={lam:g}")


# --------------------------------------------------------------------------- gradients


def grad_Li(Q_meta_slice: TableLike, task: TabularTask, lam: float, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``lam * (Q_meta - Q*)`` with ``Q*`` the regularised fixed point anchored at ``Q_meta``."""
    _check_lam(lam)
    meta = _vals(Q_meta_slice)
    q_star = solve_fixed_point(task, meta, lam, tol).values
    return lam * (meta - q_star)


def mean_embedded(family: TaskFamily, per_task: list[np.ndarray]) -> np.ndarray:
    """``(1/N) sum_i`` of per-task tables scattered into union-key space (zero off membership)."""
    total = np.zeros(family.n_keys)
    for idx, g in zip(family.key_index, per_task):
        total[idx] += g
    return total / len(family)


def grad_L_norm_sq(Q_meta: TableLike, family: TaskFamily, lam: float, tol: float = DEFAULT_TOL) -> float:
    """Squared Euclidean norm of the task-averaged gradient over all union keys."""
    _check_lam(lam)
    meta = _vals(Q_meta)
    grads = [grad_Li(meta[idx], task, lam, tol) for task, idx in zip(family, family.key_index)]
    g = mean_embedded(family, grads)
    return float(g @ g)


# --------------------------------------------------------------------------- diversity


def _next_key_probs(task: TabularTask, s: int, a: int) -> dict:
    out: dict = {}
    for j, p in zip(task.next_states[s, a], task.next_probs[s, a]):
        if p > 0:
            key = task.state_keys[j]
            out[key] = out.get(key, 0.0) + float(p)
    return out


def sigma2_sq_from(sigma_sq: float, lam: float, gamma: float, r_max: float) -> float:
    if lam * lam <= 8:
        return math.inf
    d = lam * lam - 8.0
    return 2 * lam * lam * sigma_sq / d + 2 * lam * lam * gamma * r_max / (d * (1.0 - gamma))


def diversity_constants(family: TaskFamily, lam: float) -> DiversityConstants:
    """Tightest reward and transition deviation bounds over the keys every task owns.

    Transition deviation is the largest per-successor probability gap
    ``max_{s'} |P_i(s'|s,a) - mean_j P_j(s'|s,a)|``, successors matched by state key.
    """
    gamma, r_max = family.gamma, family.r_max
    n = len(family)
    sigma1 = np.zeros(n)
    sigma2 = np.zeros(n)
    for k in family.intersection_keys:
        skey, a = family.union_keys[k]
        rewards = np.empty(n)
        dists = []
        for i, task in enumerate(family):
            s = task.state_index(skey)
            rewards[i] = task.rewards[s, a]
            dists.append(_next_key_probs(task, s, a))
        sigma1 = np.maximum(sigma1, np.abs(rewards - rewards.mean()))
        support = sorted(set().union(*dists))
        probs = np.array([[d.get(key, 0.0) for key in support] for d in dists])
        sigma2 = np.maximum(sigma2, np.abs(probs - probs.mean(axis=0)).max(axis=1))
    sigma_sq = float(np.mean((sigma1 + sigma2 * gamma * r_max / (1.0 - gamma)) ** 2))
    return DiversityConstants(tuple(map(float, sigma1)), tuple(map(float, sigma2)), sigma_sq,
                              sigma2_sq_from(sigma_sq, lam, gamma, r_max), r_max, gamma, float(lam))


# --------------------------------------------------------------------------- contraction and gap


def check_contraction(task: TabularTask, Q_meta_slice: TableLike, lam: float, n_trials: int,
                      rng: np.random.Generator) -> float:
    """Largest observed ``||B Q1 - B Q2||_inf / ||Q1 - Q2||_inf`` over random pairs."""
    if n_trials < 1:
        raise InvalidParameter("n_trials must be >= 1")
    meta = _vals(Q_meta_slice)
    bound = task.r_max / (1.0 - task.gamma)
    worst = 0.0
    for _ in range(n_trials):
        q1 = rng.uniform(-bound, bound, task.shape)
        q2 = rng.uniform(-bound, bound, task.shape)
        den = np.abs(q1 - q2).max()
        if den == 0:
            continue
        num = np.abs(regularized_operator(task, q1, meta, lam) - regularized_operator(task, q2, meta, lam)).max()
        worst = max(worst, float(num / den))
    return worst


def theorem1_gap(task: TabularTask, Q_meta_slice: TableLike, config: PersonalizationConfig,
                 rng: np.random.Generator, steps: int | None = None) -> np.ndarray:
    """Sup-norm gap between exact-expectation and sampled sweeps run side by side.

    Both iterations start from zero and regularise toward ``Q_meta_slice``;
    each step updates every entry, the sampled one from ``config.M`` draws.
    ``steps`` defaults to ``config.R * config.K``.  The step size only has to
    make the exact sweep a contraction, ``|1 - eta(1+lam)| + eta*gamma < 1``.
    """
    eta, lam = config.eta_personalized, config.lam
    if eta <= 0 or abs(1.0 - eta * (1.0 + lam)) + eta * task.gamma >= 1.0:
        raise InvalidParameter(f"eta={eta:g}, lambda={lam:g} does not give a contracting sweep")
    steps = config.R * config.K if steps is None else steps
    if steps < 1:
        raise InvalidParameter("steps must be >= 1")
    aux = _vals(Q_meta_slice)
    if aux.shape != task.shape:
        raise InvalidState("meta slice does not match task")
    q_exact = np.zeros(task.shape)
    q_sampled = np.zeros(task.shape)
    gaps = np.empty(steps)
    for k in range(steps):
        q_exact = _regularized_td(q_exact, aux, exact_targets(task, q_exact), eta, lam)
        q_sampled = _regularized_td(q_sampled, aux, sampled_targets(task, q_sampled, config.M, rng), eta, lam)
        gaps[k] = np.abs(q_exact - q_sampled).max()
    return gaps


def estimate_delta(task: TabularTask, Q_meta_slice: TableLike, config: PersonalizationConfig,
                   rng: np.random.Generator, n_repeats: int = 1, steps: int | None = None) -> float:
    """Largest final gap over ``n_repeats`` independent gap runs."""
    if n_repeats < 1:
        raise InvalidParameter("n_repeats must be >= 1")
    if task.is_deterministic:
        return 0.0
    return max(float(theorem1_gap(task, Q_meta_slice, config, rng, steps)[-1]) for _ in range(n_repeats))


# --------------------------------------------------------------------------- distance bound


def bound_rhs(delta_est: float, grad_norm_sq: float, sigma2_sq: float, lam: float) -> float:
    _check_bound_lam(lam)
    return 2 * delta_est ** 2 + 2.0 / (lam * lam - 8.0) * grad_norm_sq + 2 * sigma2_sq / (lam * lam)


def theorem2b_check(training_state: TrainingState, family: TaskFamily, config: PersonalizationConfig,
                    delta_est: float, tol: float = DEFAULT_TOL,
                    constants: DiversityConstants | None = None) -> BoundReport:
    """Measured mean personalised-to-meta squared distance against its bound."""
    lam = config.lam
    _check_bound_lam(lam)
    if delta_est < 0:
        raise InvalidParameter("delta_est must be >= 0")
    if constants is None:
        constants = diversity_constants(family, lam)
    gn = grad_L_norm_sq(training_state.meta, family, lam, tol)
    lhs = distance_sq(training_state, family)
    return BoundReport(training_state.round, lhs, bound_rhs(delta_est, gn, constants.require_sigma2_sq(), lam),
                       gn, float(delta_est))


class BoundMonitor:
    """Per-round diagnostics hook for ``run_training``.

    Estimates delta for every task from its current meta slice (own stream
    ``(seed, "delta", task.id, round)``), keeps every ``BoundReport`` and
    returns the record fields.  With ``lam**2 <= 8`` only the gradient norm is
    reported.
    """

    def __init__(self, family: TaskFamily, lam: float, seed: int, n_repeats: int = 1, tol: float = DEFAULT_TOL):
        self.seed, self.n_repeats, self.tol = seed, n_repeats, tol
        self.bound_defined = lam * lam > 8
        self.constants = diversity_constants(family, lam)
        self.reports: list[BoundReport] = []

    def __call__(self, state: TrainingState, family: TaskFamily, config: PersonalizationConfig) -> dict:
        if not self.bound_defined:
            return {"grad_L_norm_sq": grad_L_norm_sq(state.meta, family, config.lam, self.tol)}
        delta = max(estimate_delta(task, state.meta.values[idx], config,
                                   child_stream(self.seed, "delta", task.id, state.round), self.n_repeats)
                    for task, idx in zip(family, family.key_index))
        rep = theorem2b_check(state, family, config, delta, self.tol, self.constants)
        self.reports.append(rep)
        return {"grad_L_norm_sq": rep.grad_norm_sq, "bound_rhs": rep.rhs, "bound_satisfied": rep.satisfied}
