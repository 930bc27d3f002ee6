import numpy as np
import pytest

from pmetarl.baselines import q_learning_update, train_independent, train_joint, train_model_average
from pmetarl.envs import TaskFamily, make_bandit_family, make_gridworld_family
from pmetarl.pmeta import EvalSpec, PersonalizationConfig
from pmetarl.qcore import GREEDY, evaluate_return

from conftest import one_state_task, value_iteration

CFG = PersonalizationConfig(lam=0.0, eta_personalized=0.1, eta_aux=0.0, C=3, R=3, K=1, horizon=30)


def test_q_learning_update():
    q = np.array([[0.0, 0.0], [1.0, 3.0]])
    assert q_learning_update(q, 0, 1, 1.0, [1], 0.5, 0.9) == pytest.approx(0.5 * (1 + 2.7))


def test_single_task_trainers_agree():
    fam = make_gridworld_family([4], 2)
    ind = train_independent(fam, CFG, 5)
    meta, tables, _ = train_model_average(fam, CFG, 5)
    joint = train_joint(fam, CFG, 5)
    assert np.array_equal(ind[0].values, tables[0].values)
    assert np.array_equal(ind[0].values.ravel(), meta.values)
    assert np.array_equal(ind[0].values.ravel(), joint.values)


def test_model_average_identical_tasks():
    base = make_gridworld_family([4], 1)[0]
    fam = TaskFamily((base, base))
    meta, tables, _ = train_model_average(fam, CFG, 0)
    assert np.array_equal(tables[0].values, tables[1].values)
    assert np.array_equal(meta.values, tables[0].values.ravel())


def test_model_average_two_bandits_by_hand():
    fam = make_bandit_family([[1.0], [3.0]])
    cfg = PersonalizationConfig(lam=0.0, eta_personalized=0.1, C=1, R=1, K=1, horizon=1)
    meta, tables, _ = train_model_average(fam, cfg, 0)
    assert [t.values[0, 0] for t in tables] == [pytest.approx(0.1), pytest.approx(0.3)]
    assert meta.values[0] == pytest.approx(0.2)


def test_independent_gamma_zero_learns_mean_reward():
    fam = TaskFamily((one_state_task([0.25, -0.5, 0.75], gamma=0.0),))
    cfg = PersonalizationConfig(lam=0.0, eta_personalized=0.05, C=10, horizon=200, epsilon_start=1.0,
                                epsilon_finish=1.0)
    (q,) = train_independent(fam, cfg, 0)
    assert np.allclose(q.values[0], [0.25, -0.5, 0.75], atol=1e-6)


def test_independent_reaches_optimal_return(rng):
    (task,) = make_gridworld_family([4], 3).tasks
    cfg = PersonalizationConfig(lam=0.0, eta_personalized=0.5, C=40, R=3, K=2, horizon=40,
                                epsilon_start=0.5, epsilon_finish=0.3)
    (q,) = train_independent(TaskFamily((task,)), cfg, 0)
    opt = value_iteration(task)
    got, _ = evaluate_return(task, q.values, GREEDY, 200, 30, np.random.default_rng(9))
    want, _ = evaluate_return(task, opt, GREEDY, 200, 30, np.random.default_rng(9))
    assert got == pytest.approx(want)


def test_independent_deterministic():
    fam = make_gridworld_family([4, 5], 0)
    a = train_independent(fam, CFG, 1)
    b = train_independent(fam, CFG, 1)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))


def test_joint_conflicting_bandits():
    fam = make_bandit_family([[1.0, 0.0], [0.0, 1.0]])
    cfg = PersonalizationConfig(lam=0.0, eta_personalized=0.05, C=10, horizon=20)
    ev = EvalSpec(20, 1)
    meta, rj = train_joint(fam, cfg, 0, evaluation=ev, return_metrics=True)
    _, ri = train_independent(fam, cfg, 0, evaluation=ev, return_metrics=True)
    assert np.allclose(meta.values, 0.5, atol=0.25)
    assert np.mean(rj[-1].meta_returns) == pytest.approx(0.5)
    assert np.mean(ri[-1].pers_returns) == 1.0
