import numpy as np
import pytest

from pmetarl.baselines import train_independent
from pmetarl.envs import TaskFamily, make_gridworld_family, make_random_task
from pmetarl.errors import InvalidParameter, InvalidState
from pmetarl.pmeta import (EvalSpec, PersonalizationConfig, TrainingState, aggregate, auxiliary_step,
                           personalized_step_exact, personalized_step_sampled, run_training, sweep_exact)
from pmetarl.qcore import MetaQTable, QTable, solve_fixed_point

from conftest import one_state_task, two_outcome_task


def test_sampled_step_lambda_zero_is_q_learning():
    task = one_state_task([1.0], gamma=0.9)
    q = np.zeros((1, 1))
    assert personalized_step_sampled(q, np.zeros((1, 1)), (0, 0, 1.0, [0]), 0.1, 0.0, 0.9) == pytest.approx(0.1)


def test_sampled_step_pulls_toward_aux():
    q = np.zeros((2, 1))  # state 1 is the successor, max next = 0
    aux = np.ones((2, 1))
    new = personalized_step_sampled(q, aux, (0, 0, 1.0, [1]), 0.05, 10.0, 0.9)
    assert new == pytest.approx(0.55)
    assert q[0, 0] == new


def test_step_precondition():
    q = np.zeros((1, 1))
    with pytest.raises(InvalidParameter):
        personalized_step_sampled(q, q, (0, 0, 1.0, [0]), 0.1, 10.0, 0.9)
    with pytest.raises(InvalidParameter):
        personalized_step_sampled(q, q, (0, 0, 1.0, [0]), 0.0, 1.0, 0.9)


def test_step_at_fixed_point_is_zero():
    (task,) = make_gridworld_family([4], 0).tasks
    meta = np.random.default_rng(0).normal(size=task.shape)
    lam = 10.0
    q_star = solve_fixed_point(task, meta, lam, tol=1e-12).values
    for s in range(task.n_states):
        for a in range(task.n_actions):
            q = q_star.copy()
            personalized_step_sampled(q, meta, (s, a, task.rewards[s, a], task.next_states[s, a, :1]),
                                      1 / 11, lam, task.gamma)
            assert abs(q[s, a] - q_star[s, a]) < 1e-9


def test_exact_equals_sampled_on_deterministic_task(rng):
    (task,) = make_gridworld_family([4], 1).tasks
    q = rng.normal(size=task.shape)
    aux = rng.normal(size=task.shape)
    for s, a in [(0, 0), (5, 2), (9, 3)]:
        q1, q2 = q.copy(), q.copy()
        e = personalized_step_exact(q1, aux, task, s, a, 0.05, 3.0)
        m = personalized_step_sampled(q2, aux, (s, a, task.rewards[s, a], task.next_states[s, a]), 0.05, 3.0,
                                      task.gamma)
        assert e == m


def test_exact_step_two_outcomes():
    task = two_outcome_task(p=0.5, r=0.0, gamma=0.5)
    q = np.array([[0.0], [2.0], [4.0]])
    assert personalized_step_exact(q, np.zeros_like(q), task, 0, 0, 1.0, 0.0) == pytest.approx(1.5)


def test_exact_step_is_mean_of_sampled(rng):
    task = two_outcome_task(p=0.3, r=0.2, gamma=0.9)
    q = np.array([[0.0], [1.0], [-2.0]])
    aux = np.array([[0.5], [0.0], [0.0]])
    exact = personalized_step_exact(q.copy(), aux, task, 0, 0, 0.05, 2.0)
    n = 100_000
    nexts = task.sample_next(np.zeros(n, int), np.zeros(n, int), rng.random(n))
    vals = 0.0 + 0.05 * (0.2 + 0.9 * q[nexts, 0] - 0.0) + 0.1 * (0.5 - 0.0)
    assert abs(vals.mean() - exact) <= 3 * vals.std() / np.sqrt(n)
    one = personalized_step_sampled(q.copy(), aux, (0, 0, 0.2, [nexts[0]]), 0.05, 2.0, 0.9)
    assert one == vals[0]


def test_auxiliary_step_examples():
    assert auxiliary_step(np.ones((1, 1)), np.full((1, 1), 2.0), 0.05, 10.0).values[0, 0] == pytest.approx(1.5)
    x = np.array([[0.3, -1.0]])
    assert np.array_equal(auxiliary_step(x, x, 0.05, 10.0).values, x)
    p = np.array([[4.0, 2.0]])
    assert np.array_equal(auxiliary_step(x, p, 0.1, 10.0).values, p)
    with pytest.raises(InvalidParameter):
        auxiliary_step(x, p, 0.2, 10.0)


def _bandits(n, arms=1):
    return TaskFamily(tuple(one_state_task(np.zeros(arms), gamma=0.0, task_id=i) for i in range(n)))


def test_aggregate_examples():
    fam = _bandits(2)
    meta = aggregate(MetaQTable.zeros(fam), [np.array([[1.0]]), np.array([[3.0]])], fam, 1.0)
    assert meta.values[0] == 2.0
    meta = aggregate(MetaQTable(np.array([4.0])), [np.array([[2.0]]), np.array([[2.0]])], fam, 0.5)
    assert meta.values[0] == 3.0


def test_aggregate_key_owned_by_one_task():
    fam = make_gridworld_family([2, 3, 4], 0)
    auxes = [np.full(t.shape, float(i + 1)) for i, t in enumerate(fam)]
    meta = aggregate(MetaQTable.zeros(fam), auxes, fam, 1.0)
    only_big = fam.key_counts == 1
    assert only_big.any() and np.all(meta.values[only_big] == 3.0)
    shared = fam.key_counts == 3
    assert np.all(meta.values[shared] == 2.0)


def test_aggregate_errors():
    fam = _bandits(2)
    with pytest.raises(InvalidState):
        aggregate(MetaQTable.zeros(fam), [np.zeros((1, 1))], fam, 1.0)
    with pytest.raises(InvalidState):
        aggregate(MetaQTable.zeros(fam), [np.zeros((1, 2)), np.zeros((1, 1))], fam, 1.0)
    with pytest.raises(InvalidParameter):
        aggregate(MetaQTable.zeros(fam), [np.zeros((1, 1))] * 2, fam, 1.5)


def test_aggregate_conservation_and_broadcast_idempotence(rng):
    fam = make_gridworld_family([4, 4, 4], 0)
    common = rng.normal(size=fam[0].shape)
    meta = aggregate(MetaQTable.zeros(fam), [common] * 3, fam, 1.0)
    assert np.array_equal(meta.values[fam.key_index[0]], common)
    fam = make_gridworld_family([3, 5], 0)
    meta = MetaQTable(rng.normal(size=fam.n_keys))
    again = aggregate(meta, [meta.values[idx] for idx in fam.key_index], fam, 1.0)
    assert np.allclose(again.values, meta.values, rtol=0, atol=1e-15)


CFG = PersonalizationConfig(lam=10.0, eta_personalized=1 / 11, eta_aux=0.05, C=3, R=3, K=1, horizon=30)


def test_zero_rounds_returns_initial_state():
    fam = make_gridworld_family([3, 4], 0)
    state, recs = run_training(fam, PersonalizationConfig(C=0), 0)
    assert recs == [] and state.round == 0
    assert not state.meta.values.any() and not any(p.values.any() for p in state.personalized)


def test_run_training_deterministic():
    fam = make_gridworld_family([4, 5], 3)
    s1, r1 = run_training(fam, CFG, 3, evaluation=EvalSpec(5, 20))
    s2, r2 = run_training(fam, CFG, 3, evaluation=EvalSpec(5, 20))
    assert np.array_equal(s1.meta.values, s2.meta.values)
    assert r1 == r2


def test_lambda_zero_reproduces_independent():
    fam = make_gridworld_family([5], 0)
    cfg = PersonalizationConfig(lam=0.0, eta_personalized=0.1, eta_aux=0.05, C=3, horizon=40)
    state, _ = run_training(fam, cfg, 11)
    tables = train_independent(fam, cfg, 11)
    assert np.array_equal(state.personalized[0].values, tables[0].values)


def test_identical_tasks_stay_identical():
    base = make_gridworld_family([4], 5)[0]
    fam = TaskFamily(tuple(base.with_id(0) for _ in range(3)))  # same id -> same streams
    seen = []

    def watch(c, state, trace):
        p = [q.values for q in state.personalized]
        assert all(np.array_equal(p[0], x) for x in p[1:])
        assert np.array_equal(state.meta.values, state.auxiliary[0].values.ravel())
        seen.append(c)

    run_training(fam, CFG, 0, on_round=watch)
    assert seen == [1, 2, 3]


def test_telescoping_identity_every_round():
    fam = make_gridworld_family([3, 4, 5], 2)
    cfg = PersonalizationConfig(lam=10.0, eta_personalized=1 / 11, eta_aux=0.03, C=4, R=3, horizon=30)

    def check(c, state, trace):
        lam, eta_aux = cfg.lam, cfg.eta_aux
        for aux_hist, pers_hist in zip(trace["aux"], trace["pers"]):
            z = sum(lam * (aux_hist[r] - pers_hist[r]) for r in range(cfg.R))
            assert np.abs((aux_hist[0] - aux_hist[-1]) - eta_aux * z).max() < 1e-9

    _, recs = run_training(fam, cfg, 0, on_round=check)
    assert max(r.telescoping_residual for r in recs) < 1e-9


def test_single_task_converges_near_regularised_fixed_point():
    (det,) = make_gridworld_family([3], 1).tasks
    fam = TaskFamily((det,))
    cfg = PersonalizationConfig(lam=10.0, eta_personalized=1 / 11, eta_aux=0.1, C=40, R=3, K=5, horizon=30,
                                epsilon_start=1.0, epsilon_finish=1.0)
    state, _ = run_training(fam, cfg, 0)
    q_star = solve_fixed_point(det, state.meta.values[fam.key_index[0]], 10.0).values
    assert np.abs(state.personalized[0].values - q_star).max() <= 0.05 * det.r_max / (1 - det.gamma)


def test_boundedness(rng):
    fam = make_gridworld_family([4, 6], 1)
    bound = fam.r_max / (1 - fam.gamma)

    def check(c, state, trace):
        for q in state.personalized + state.auxiliary:
            assert np.abs(q.values).max() <= bound
        assert np.abs(state.meta.values).max() <= bound

    run_training(fam, CFG, 1, on_round=check)


def test_config_validation():
    with pytest.raises(InvalidParameter):
        PersonalizationConfig(lam=10.0, eta_aux=0.2)
    with pytest.raises(InvalidParameter):
        PersonalizationConfig(beta=1.5)
    with pytest.raises(InvalidParameter):
        PersonalizationConfig(R=0)
    with pytest.raises(InvalidParameter):
        run_training(make_gridworld_family([3], 0), PersonalizationConfig(lam=10.0, eta_personalized=0.5), 0)


def test_epsilon_schedule():
    cfg = PersonalizationConfig(C=10)
    assert cfg.epsilon(1) == 0.3 and cfg.epsilon(10) == pytest.approx(0.01)
    assert cfg.policy(5).kind == "epsilon-greedy"


def test_training_state_check():
    fam = make_gridworld_family([3], 0)
    state = TrainingState.initial(fam)
    state.check(fam)
    state.personalized[0] = QTable(0, np.zeros((2, 4)))
    with pytest.raises(InvalidState):
        state.check(fam)


def test_sweep_exact_contracts(rng):
    task = make_random_task(5, 2, rng, gamma=0.9)
    meta = rng.normal(size=task.shape)
    q = np.zeros(task.shape)
    for _ in range(400):
        q = sweep_exact(task, q, meta, 1 / 3, 2.0)
    assert np.abs(q - solve_fixed_point(task, meta, 2.0).values).max() < 1e-9


def test_unknown_exploration_rejected():
    with pytest.raises(InvalidParameter):
        PersonalizationConfig(exploration="softmax")
