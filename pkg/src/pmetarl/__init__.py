"""Tabular personalised meta-reinforcement learning with theory diagnostics."""

from .baselines import q_learning_update, train_independent, train_joint, train_model_average
from .config import ExperimentConfig, load_config, parse_config, write_config
from .envs import (TabularTask, TaskFamily, make_bandit_family, make_gridworld_family, make_mountaincar_family,
                   make_random_task, sample_initial, step, transition_dist)
from .errors import (BoundUndefined, ConfigError, EmptyInput, InvalidIndex, InvalidParameter, InvalidState,
                     InvalidTaskParameter, NonConvergence, PMetaError)
from .experiment import run_baselines, run_experiment, sweep_lambda, verify_theory
from .metrics import MetricsRecord, emit_plot_data, read_metrics, write_metrics
from .pmeta import (EvalSpec, PersonalizationConfig, TrainingState, aggregate, auxiliary_step,
                    personalized_step_exact, personalized_step_sampled, run_training)
from .qcore import (MetaQTable, PolicySpec, QTable, bellman_backup, evaluate_return, regularized_backup,
                    select_action, solve_fixed_point)
from .theory import (BoundReport, DiversityConstants, check_contraction, diversity_constants, estimate_delta,
                     grad_L_norm_sq, grad_Li, theorem1_gap, theorem2b_check)

__version__ = "0.1.0"
