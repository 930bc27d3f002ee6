"""Experiment configuration and its plain-text ``key = value`` format.

One setting per line, ``#`` starts a comment, lists are comma separated::

    # five gridworlds, personalised training
    family = gridworld
    sizes = 4, 5, 6, 7, 8
    algorithm = pmeta
    lam = 10
    seeds = 0, 1, 2, 3, 4

Unknown keys and values of the wrong type raise ``ConfigError``.  Every key
and its default is listed in ``ExperimentConfig``.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path

from .envs import TaskFamily, make_bandit_family, make_gridworld_family, make_mountaincar_family
from .errors import ConfigError, PMetaError
from .pmeta import EvalSpec, PersonalizationConfig

ALGORITHMS = ("pmeta", "model-average", "independent", "joint")
FAMILIES = ("gridworld", "mountaincar", "bandit")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs.

    Family: ``family`` picks the builder; ``sizes`` (gridworld side lengths),
    ``inclines`` and ``bins`` (mountain car) and ``arm_rewards`` (bandit, one
    ``;``-separated row per task) parameterise it.  The gridworld landmarks
    are drawn from each run's seed.

    Training: the personalisation fields mirror ``PersonalizationConfig``
    (``eta`` is the personalised step size).  ``eval_episodes`` and
    ``eval_horizon`` control greedy evaluation after every round.

    Diagnostics: ``delta_repeats`` gap runs per task estimate delta;
    ``smoothness`` is only echoed in reports.  ``lambdas`` is the grid used
    by the lambda sweep.
    """

    family: str = "gridworld"
    sizes: tuple[int, ...] = (4, 5, 6, 7, 8)
    inclines: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)
    bins: tuple[int, ...] = (32, 32)
    arm_rewards: str = "1,0; 0,1"
    gamma: float = 0.99
    algorithm: str = "pmeta"
    lam: float = 10.0
    eta: float = 1e-3
    eta_aux: float = 1e-3
    beta: float = 1.0
    C: int = 10
    R: int = 3
    K: int = 1
    M: int = 1
    horizon: int = 100
    exploration: str = "epsilon-greedy"
    epsilon_start: float = 0.3
    epsilon_finish: float = 0.01
    temperature: float = 1.0
    eta_decay: float = 0.0
    eval_episodes: int = 100
    eval_horizon: int = 100
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    delta_repeats: int = 1
    smoothness: float = 1.0
    lambdas: tuple[float, ...] = (5.0, 10.0, 20.0, 50.0)
    checkpoint_every: int = 0
    out_dir: str = "out"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {', '.join(FAMILIES)}, got {self.family!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHMS)}, got {self.algorithm!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.family == "gridworld" and not self.sizes:
            raise ConfigError("gridworld needs sizes")
        if self.family == "mountaincar" and (not self.inclines or len(self.bins) != 2):
            raise ConfigError("mountaincar needs inclines and two bin counts")
        if self.eval_episodes < 1 or self.eval_horizon < 1 or self.delta_repeats < 1:
            raise ConfigError("eval_episodes, eval_horizon and delta_repeats must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.eta * (1.0 + self.lam) > 1.0 + 1e-12:
            raise ConfigError(f"eta*(1+lam) = {self.eta * (1.0 + self.lam):g} exceeds 1")
        try:
            self.personalization()
            self.arm_table()
        except PMetaError as exc:
            raise ConfigError(str(exc)) from exc

    def personalization(self, seed: int = 0, lam: float | None = None) -> PersonalizationConfig:
        return PersonalizationConfig(
            lam=self.lam if lam is None else lam, eta_personalized=self.eta, eta_aux=self.eta_aux,
            beta=self.beta, C=self.C, R=self.R, K=self.K, M=self.M, horizon=self.horizon,
            exploration=self.exploration, epsilon_start=self.epsilon_start,
            epsilon_finish=self.epsilon_finish, temperature=self.temperature,
            eta_decay=self.eta_decay, seed=seed)

    def evaluation(self) -> EvalSpec:
        return EvalSpec(self.eval_episodes, self.eval_horizon)

    def arm_table(self) -> list[list[float]]:
        try:
            return [[float(x) for x in row.split(",")] for row in self.arm_rewards.split(";") if row.strip()]
        except ValueError:
            raise ConfigError(f"arm_rewards is not a ';'-separated table of numbers: {self.arm_rewards!r}") from None

    def build_family(self, seed: int) -> TaskFamily:
        if self.family == "gridworld":
            return make_gridworld_family(self.sizes, seed, self.gamma)
        if self.family == "mountaincar":
            return make_mountaincar_family(self.inclines, tuple(self.bins), self.gamma)
        return make_bandit_family(self.arm_table(), self.gamma)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_HINTS = typing.get_type_hints(ExperimentConfig)
FIELDS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def _convert(key: str, text: str):
    hint = _HINTS[key]
    try:
        if typing.get_origin(hint) is tuple:
            item = typing.get_args(hint)[0]
            return tuple(item(x.strip()) for x in text.split(",") if x.strip())
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {getattr(hint, '__name__', hint)}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in _HINTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _convert(key, value.strip())
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def format_config(config: ExperimentConfig) -> str:
    lines = []
    for key in FIELDS:
        v = getattr(config, key)
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def write_config(config: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(format_config(config))
    return path
