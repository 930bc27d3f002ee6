"""Experiment orchestration: per-seed runs, lambda sweeps, baselines and theory checks.

Output layout of one experiment directory::

    config.txt                 the resolved configuration
    metrics_seed<k>.csv        one row per round (wall-clock left empty for byte-stable reruns)
    diagnostics_seed<k>.jsonl  diversity constants and per-round bound reports (pmeta, lam^2 > 8)
    checkpoint_seed<k>.txt     final tables in the tabular text format
    plot_data.csv              (series, round, mean, std) over seeds
    returns.png, grad_norm.png, distance_bound.png

A failed run leaves an ``INCOMPLETE`` file naming the error.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import train_independent, train_joint, train_model_average
from .config import ALGORITHMS, ExperimentConfig, write_config
from .errors import ConfigError
from .metrics import MetricsRecord, MetricsSink, emit_plot_data, plot_rows, write_tagged
from .pmeta import run_training
from .plotting import plot_bars, render_run_figures
from .streams import child_stream
from .tabular_io import dumps_state, dumps_tables
from .theory import BoundMonitor, BoundReport, check_contraction, estimate_delta

log = logging.getLogger("pmetarl")

TELESCOPING_TOL = 1e-9


@dataclass
class SeedResult:
    seed: int
    records: list[MetricsRecord]
    reports: list[BoundReport] = field(default_factory=list)
    notice: str | None = None


@dataclass
class ExperimentResult:
    out_dir: Path
    seeds: list[SeedResult]

    @property
    def records(self) -> list[MetricsRecord]:
        return [r for s in self.seeds for r in s.records]

    @property
    def violations(self) -> int:
        return sum(not rep.satisfied for s in self.seeds for rep in s.reports)

    def final(self, attr: str) -> np.ndarray:
        """Per-seed final-round mean of ``pers_return_mean`` or ``meta_return_mean``."""
        return np.array([getattr(s.records[-1], attr) for s in self.seeds], dtype=float)


def run_seed(config: ExperimentConfig, seed: int, out_dir=None) -> SeedResult:
    """Train one seed with the configured algorithm, writing its files when ``out_dir`` is given."""
    family = config.build_family(seed)
    pconf = config.personalization(seed)
    evaluation = config.evaluation()
    out = Path(out_dir) if out_dir is not None else None
    sink = MetricsSink(out / f"metrics_seed{seed}.csv") if out is not None else None
    result = SeedResult(seed, [])
    try:
        if config.algorithm == "pmeta":
            monitor = BoundMonitor(family, pconf.lam, seed, config.delta_repeats)
            if not monitor.bound_defined:
                result.notice = f"lambda={pconf.lam:g} has lambda^2 <= 8; distance bound check skipped"
                log.info("seed %d: %s", seed, result.notice)
            state, result.records = run_training(family, pconf, seed, evaluation=evaluation,
                                                 diagnostics=monitor, sink=sink)
            result.reports = monitor.reports
            checkpoint = dumps_state(state, family)
            if out is not None:
                rows = [("diversity", monitor.constants)] + [("bound", r) for r in monitor.reports]
                write_tagged(rows, out / f"diagnostics_seed{seed}.jsonl")
        elif config.algorithm == "model-average":
            meta, tables, result.records = train_model_average(family, pconf, seed, evaluation=evaluation,
                                                               sink=sink)
            checkpoint = dumps_tables(family, meta, tables)
        elif config.algorithm == "independent":
            tables, result.records = train_independent(family, pconf, seed, evaluation=evaluation, sink=sink,
                                                       return_metrics=True)
            checkpoint = dumps_tables(family, None, tables)
        else:
            meta, result.records = train_joint(family, pconf, seed, evaluation=evaluation, sink=sink,
                                               return_metrics=True)
            checkpoint = dumps_tables(family, meta)
    finally:
        if sink is not None:
            sink.close()
    if out is not None:
        (out / f"checkpoint_seed{seed}.txt").write_text(checkpoint)
    return result


def _run_seed_args(args):
    return run_seed(*args)


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1, figures: bool = True) -> ExperimentResult:
    """Run every seed (in parallel when ``jobs > 1``), then aggregate plot data and figures."""
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "INCOMPLETE"
    marker.write_text("running\n")
    try:
        write_config(config, out / "config.txt")
        args = [(config, seed, out) for seed in config.seeds]
        if jobs > 1 and len(args) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                seeds = list(pool.map(_run_seed_args, args))
        else:
            seeds = [run_seed(*a) for a in args]
        result = ExperimentResult(out, seeds)
        emit_plot_data(result.records, out / "plot_data.csv")
        if figures:
            render_run_figures(plot_rows(result.records), out)
    except BaseException as exc:
        marker.write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    marker.unlink()
    return result


# --------------------------------------------------------------------------- summaries


def _mean_std(x: np.ndarray) -> tuple[float, float]:
    x = x[np.isfinite(x)]
    if x.size == 0:
        return math.nan, math.nan
    return float(x.mean()), float(x.std())


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(v)


SUMMARY_COLUMNS = ("pers_mean", "pers_std", "meta_mean", "meta_std", "n_seeds")


def summarize(result: ExperimentResult) -> dict:
    """Final-round returns across seeds (population std)."""
    pm, ps = _mean_std(result.final("pers_return_mean"))
    mm, ms = _mean_std(result.final("meta_return_mean"))
    return {"pers_mean": pm, "pers_std": ps, "meta_mean": mm, "meta_std": ms, "n_seeds": len(result.seeds)}


def _write_table(path: Path, head: Sequence[str], rows: list[list]) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])
    return path


def sweep_lambda(config: ExperimentConfig, lambdas: Sequence[float] | None = None, out_dir=None,
                 jobs: int = 1, figures: bool = True) -> list[dict]:
    """One pmeta experiment per lambda with shared seeds; writes ``sweep.csv``.

    The row with the highest final personalised return is flagged ``best``.
    """
    lambdas = list(config.lambdas if lambdas is None else lambdas)
    if not lambdas:
        raise ConfigError("lambdas must be nonempty")
    for lam in lambdas:  # fail before any run rather than part way through the grid
        config.replace(lam=float(lam))
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for lam in lambdas:
        res = run_experiment(config.replace(algorithm="pmeta", lam=float(lam)), out / f"lam_{lam:g}", jobs,
                             figures)
        rows.append({"lam": float(lam), **summarize(res)})
    best = int(np.nanargmax([r["pers_mean"] for r in rows]))
    for i, r in enumerate(rows):
        r["best"] = int(i == best)
    head = ("lam",) + SUMMARY_COLUMNS + ("best",)
    _write_table(out / "sweep.csv", head, [[r[h] for h in head] for r in rows])
    if figures:
        plot_bars([f"{r['lam']:g}" for r in rows], [r["pers_mean"] for r in rows],
                  [r["pers_std"] for r in rows], out / "sweep.png", "final personalised return", best)
    return rows


def run_baselines(config: ExperimentConfig, out_dir=None, jobs: int = 1, figures: bool = True,
                  algorithms: Sequence[str] = ALGORITHMS) -> list[dict]:
    """Every trainer on the same family and seeds; writes ``baselines.csv``.

    For ``joint`` the per-task greedy return of the shared table is reported
    in the meta columns.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for alg in algorithms:
        res = run_experiment(config.replace(algorithm=alg), out / alg, jobs, figures)
        rows.append({"algorithm": alg, **summarize(res)})
    head = ("algorithm",) + SUMMARY_COLUMNS
    _write_table(out / "baselines.csv", head, [[r[h] for h in head] for r in rows])
    if figures:
        best = [r["meta_mean"] if math.isnan(r["pers_mean"]) else r["pers_mean"] for r in rows]
        plot_bars([r["algorithm"] for r in rows], best,
                  [r["meta_std"] if math.isnan(r["pers_std"]) else r["pers_std"] for r in rows],
                  out / "baselines.png", "final return")
    return rows


# --------------------------------------------------------------------------- theory verification


@dataclass
class TheoryCheck:
    name: str
    seed: int
    value: float
    limit: float
    passed: bool


def verify_theory(config: ExperimentConfig, out_dir=None, jobs: int = 1, n_trials: int = 200,
                  figures: bool = True) -> list[TheoryCheck]:
    """Contraction, delta, distance-bound and telescoping checks on a pmeta run.

    Writes ``theory.jsonl`` (one tagged row per check) beside the experiment
    files.  A failed check is returned with ``passed = False``.
    """
    config = config.replace(algorithm="pmeta")
    out = Path(out_dir if out_dir is not None else config.out_dir)
    res = run_experiment(config, out, jobs, figures)
    checks: list[TheoryCheck] = []
    lam = config.lam
    for sr in res.seeds:
        family = config.build_family(sr.seed)
        pconf = config.personalization(sr.seed)
        for task in family:
            rng = child_stream(sr.seed, "contraction", task.id)
            meta = rng.uniform(-1.0, 1.0, task.shape)
            ratio = check_contraction(task, meta, lam, n_trials, rng)
            limit = task.gamma / (1.0 + lam) + 1e-12
            checks.append(TheoryCheck(f"contraction/task{task.id}", sr.seed, ratio, limit, ratio <= limit))
        for rec in sr.records:
            r = rec.telescoping_residual
            checks.append(TheoryCheck(f"telescoping/round{rec.round}", sr.seed, r, TELESCOPING_TOL,
                                      r <= TELESCOPING_TOL))
        for rep in sr.reports:
            checks.append(TheoryCheck(f"distance_bound/round{rep.round}", sr.seed, rep.lhs, rep.rhs, rep.satisfied))
        deltas = [estimate_delta(task, np.zeros(task.shape), pconf, child_stream(sr.seed, "delta-check", task.id),
                                 config.delta_repeats) for task in family]
        checks.append(TheoryCheck("delta_at_zero_meta", sr.seed, max(deltas), math.inf, True))
    write_tagged([("check", c) for c in checks], out / "theory.jsonl")
    return checks
