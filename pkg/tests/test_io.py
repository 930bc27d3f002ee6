import numpy as np
import pytest

from pmetarl.config import ExperimentConfig, format_config, load_config, parse_config, write_config
from pmetarl.envs import make_gridworld_family, make_mountaincar_family, make_random_task
from pmetarl.errors import ConfigError, EmptyInput
from pmetarl.metrics import (METRIC_COLUMNS, MetricsIOError, MetricsRecord, emit_plot_data, read_metrics,
                             read_plot_data, read_tagged, write_metrics, write_tagged)
from pmetarl.pmeta import PersonalizationConfig, run_training
from pmetarl.qcore import QTable
from pmetarl.tabular_io import (TabularFormatError, dumps_family, dumps_meta, dumps_qtable, dumps_state,
                                dumps_task, load_family, load_state, loads_family, loads_meta, loads_qtable,
                                loads_state, loads_task, save_family, save_state)
from pmetarl.theory import diversity_constants


# --------------------------------------------------------------------------- tabular text


def test_task_round_trip(rng):
    task = make_random_task(5, 3, rng, gamma=0.9)
    text = dumps_task(task)
    back = loads_task(text)
    assert dumps_task(back) == text
    for name in ("next_states", "next_probs", "rewards", "rho0"):
        assert np.array_equal(getattr(back, name), getattr(task, name))


def test_family_round_trip_files(tmp_path):
    fam = make_gridworld_family([3, 4], 2)
    path = save_family(fam, tmp_path / "fam.txt")
    back = load_family(path)
    assert back.union_keys == fam.union_keys and dumps_family(back) == dumps_family(fam)
    mc = make_mountaincar_family([3.0, 4.0], (4, 4))
    assert dumps_family(loads_family(dumps_family(mc))) == dumps_family(mc)


def test_task_text_golden():
    (task,) = make_gridworld_family([2], 0).tasks
    lines = dumps_task(task).splitlines()
    assert lines[0].startswith("task id=0 gamma=0.99 r_max=1.0 states=4 actions=4 branches=1 name=grid2x2@")
    assert lines[1].startswith("state 0,0 ")
    assert lines[5].startswith("sa 0,0 0 ") and lines[-1] == "end"
    assert len(lines) == 1 + 4 + 16 + 1


def test_qtable_and_meta_round_trip(rng):
    fam = make_gridworld_family([3, 4], 1)
    q = QTable(1, rng.normal(size=fam[1].shape))
    assert np.array_equal(loads_qtable(dumps_qtable(q, fam[1]), fam[1]).values, q.values)
    state, _ = run_training(fam, PersonalizationConfig(lam=10, eta_personalized=0.05, eta_aux=0.05, C=2,
                                                       horizon=10), 0)
    assert np.array_equal(loads_meta(dumps_meta(state.meta, fam), fam).values, state.meta.values)


def test_checkpoint_round_trip(tmp_path):
    fam = make_gridworld_family([3, 4], 1)
    state, _ = run_training(fam, PersonalizationConfig(lam=10, eta_personalized=0.05, eta_aux=0.05, C=2,
                                                       horizon=10), 0)
    back = load_state(save_state(state, fam, tmp_path / "ck.txt"), fam)
    assert back.round == 2 and back.updates == state.updates
    assert dumps_state(back, fam) == dumps_state(state, fam)


def test_malformed_blocks():
    with pytest.raises(TabularFormatError):
        loads_family("nonsense\n")
    task_text = dumps_task(make_gridworld_family([2], 0)[0])
    with pytest.raises(TabularFormatError):
        loads_family(task_text.replace("\nend", ""))
    fam = make_gridworld_family([2], 0)
    with pytest.raises(TabularFormatError):
        loads_state("checkpoint round=1 tasks=3 updates=0\n", fam)


# --------------------------------------------------------------------------- metrics


def _record(**kw):
    base = dict(seed=1, round=5, lam=10.0, pers_returns=(1.5, -2.25), meta_returns=(0.1,),
                grad_L_norm_sq=0.3, distance=1e-3, bound_rhs=2.0, bound_satisfied=True,
                telescoping_residual=0.0)
    base.update(kw)
    return MetricsRecord(**base)


def test_metrics_round_trip(tmp_path):
    rec = _record()
    path = write_metrics([rec], tmp_path / "m.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS) and len(lines) == 2
    assert read_metrics(path) == [rec]


def test_metrics_round_trip_missing_fields(tmp_path):
    rec = MetricsRecord(seed=0, round=1, algorithm="independent", pers_returns=(0.1 + 0.2,))
    assert read_metrics(write_metrics([rec], tmp_path / "m.csv")) == [rec]


def test_metrics_reject_nonfinite():
    with pytest.raises(ValueError):
        _record(distance=float("nan"))


def test_plot_data_population_std(tmp_path):
    recs = [_record(seed=0, pers_returns=(1.0,)), _record(seed=1, pers_returns=(3.0,))]
    rows = read_plot_data(emit_plot_data(recs, tmp_path / "p.csv", series=("pers_return",)))
    assert rows == [("pers_return", 5, 2.0, 1.0)]


def test_plot_data_empty(tmp_path):
    with pytest.raises(EmptyInput):
        emit_plot_data([], tmp_path / "p.csv")


def test_unwritable_path(tmp_path):
    with pytest.raises(MetricsIOError):
        write_metrics([_record()], tmp_path / "missing" / "m.csv")
    with pytest.raises(MetricsIOError):
        emit_plot_data([_record()], tmp_path / "missing" / "p.csv")


def test_tagged_rows(tmp_path):
    d = diversity_constants(make_gridworld_family([3, 4], 0), 2.0)
    rows = read_tagged(write_tagged([("diversity", d)], tmp_path / "t.jsonl"))
    assert rows[0]["tag"] == "diversity" and rows[0]["sigma2_sq"] == "inf"
    assert rows[0]["sigma1"] == list(d.sigma1)


# --------------------------------------------------------------------------- config


def test_empty_config_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert (cfg.lam, cfg.C, cfg.R, cfg.K, cfg.beta, cfg.eta, cfg.gamma) == (10.0, 10, 3, 1, 1.0, 1e-3, 0.99)
    assert (cfg.epsilon_start, cfg.epsilon_finish) == (0.3, 0.01)


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="lamda"):
        parse_config("lamda = 3\n")


@pytest.mark.parametrize("text", ["C = ten", "sizes = 4, x", "eta = 1e-3e", "C"])
def test_type_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_semantic_errors():
    with pytest.raises(ConfigError):
        parse_config("algorithm = dqn")
    with pytest.raises(ConfigError):
        parse_config("seeds =")
    with pytest.raises(ConfigError):
        parse_config("eta = 0.5")


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(sizes=(4, 6), lam=20.0, eta=0.01, eta_aux=0.0025, seeds=(3, 7), family="gridworld",
                           arm_rewards="1,0;0,1", algorithm="joint", out_dir="x y")
    back = load_config(write_config(cfg, tmp_path / "c.txt"))
    assert back == cfg
    assert parse_config(format_config(ExperimentConfig())) == ExperimentConfig()


def test_comments_and_whitespace():
    cfg = parse_config("# header\n  lam = 20   # trailing\n\nsizes=3,4\n")
    assert cfg.lam == 20.0 and cfg.sizes == (3, 4)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.txt")


def test_config_unknown_exploration():
    with pytest.raises(ConfigError):
        parse_config("exploration = softmax\n")
