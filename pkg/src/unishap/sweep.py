"""Grid-by-seed experiment runner.

Each (grid point, seed) pair is one task with its own random streams, so the
rows of ``results.csv`` do not depend on the thread count. Wall-clock times go
to ``timings.csv`` only; ``results.csv`` is byte-identical across repeated runs.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import pandas as pd
import structlog

from unishap.diagnostics import (
    TheoryReport,
    deletion_curve,
    insertion_curve,
    rank_correlation,
    theory_report,
)
from unishap.errors import CapabilityError, UnishapError
from unishap.estimators import EstimatorConfig, estimate, normalized_mse
from unishap.exact import BRUTEFORCE_MAX_D, exact_shapley
from unishap.games import Game
from unishap.sampling import bucket_distribution
from unishap.settings import Settings
from unishap.specs import ExperimentSpec, parse_game_spec

log = structlog.get_logger(__name__)

RESULTS_FILE = "results.csv"
SUMMARY_FILE = "summary.csv"
TIMINGS_FILE = "timings.csv"

GRID_COLUMNS = ["kind", "tau", "strategy", "paired", "lambda", "m", "maxval"]
_CSV_OPTIONS: dict[str, Any] = {"index": False, "lineterminator": "\n", "float_format": "%.17g"}


@dataclass(frozen=True)
class SweepTask:
    index: int
    point: int
    config: EstimatorConfig


@dataclass(frozen=True)
class SweepOutput:
    results: pd.DataFrame
    summary: pd.DataFrame
    timings: pd.DataFrame
    directory: Path


def build_tasks(spec: ExperimentSpec) -> list[SweepTask]:
    """Grid-point-major, seeds in spec order."""
    tasks: list[SweepTask] = []
    for point, config in enumerate(spec.configs):
        for seed in spec.seeds:
            tasks.append(SweepTask(len(tasks), point, config.with_budget(seed=seed)))
    return tasks


def reference_shapley(game: Game) -> npt.NDArray[np.float64] | None:
    """Exact attributions when available: analytic, or brute force for d <= 25."""
    if game.analytic_shapley() is None and game.d > BRUTEFORCE_MAX_D:
        return None
    return exact_shapley(game).phi


TheoryOutcome = TheoryReport | UnishapError


def _theory_reports(spec: ExperimentSpec, game: Game) -> dict[tuple[float, float], TheoryOutcome]:
    """One report per (tau, lambda); a failure is kept and charged to each row that needs it."""
    reports: dict[tuple[float, float], TheoryOutcome] = {}
    for config in spec.configs:
        lam = config.lambda_mode.resolve(game.alpha)
        key = (config.tau, lam)
        if key in reports:
            continue
        try:
            reports[key] = theory_report(
                game, bucket_distribution(game.d, config.tau), lam, eps=spec.eps, delta=spec.delta
            )
        except UnishapError as exc:
            reports[key] = exc
    return reports


def _run_task(
    task: SweepTask,
    game: Game,
    spec: ExperimentSpec,
    phi_star: npt.NDArray[np.float64] | None,
    reports: dict[tuple[float, float], TheoryOutcome],
) -> tuple[dict[str, Any], float]:
    config = task.config
    row: dict[str, Any] = {"task": task.index, "point": task.point, **config.as_record()}
    started = time.perf_counter()
    try:
        result = estimate(game, config)
        row.update(
            rows=result.rows,
            evaluations=result.evaluations,
            solver_path=result.solver_path or "",
            efficiency_gap=result.efficiency_gap,
        )
        if "mse" in spec.metrics and phi_star is not None:
            mse, zero_norm = normalized_mse(result.phi, phi_star)
            row.update(mse=mse, mse_zero_norm=zero_norm)
        if "insertion_auc" in spec.metrics:
            curve = insertion_curve(game, result.phi, spec.top_k)
            row.update(insertion_auc=curve.auc, auc_normalized=curve.normalized)
        if "deletion_auc" in spec.metrics:
            curve = deletion_curve(game, result.phi, spec.top_k)
            row.update(deletion_auc=curve.auc, auc_normalized=curve.normalized)
        if "rank_corr" in spec.metrics and phi_star is not None:
            row["rank_corr"] = rank_correlation(result.phi, phi_star)
        if "theory_report" in spec.metrics:
            report = reports[(config.tau, result.lam)]
            if isinstance(report, UnishapError):
                raise report
            row.update(
                gamma_b=report.gamma_b,
                gamma_proj=report.gamma_proj,
                eta=report.eta,
                bound_matvec=report.bound_matvec,
                bound_regression=report.bound_regression,
            )
        row.update(status="ok", error="")
    except UnishapError as exc:
        log.warning("sweep_task_failed", task=task.index, code=exc.code, error=exc.message)
        row.update(status="failed", error=f"{exc.code}: {exc.message}")
    return row, time.perf_counter() - started


def summarize(results: pd.DataFrame) -> pd.DataFrame:
    """Median and interquartile range of the normalized MSE per grid point."""
    ok = results[results["status"] == "ok"]
    if "mse" not in ok.columns:
        ok = ok.assign(mse=math.nan)
    grouped = ok.groupby(["point", *GRID_COLUMNS], sort=True, dropna=False)["mse"]
    summary = grouped.agg(
        seeds="count",
        mse_median="median",
        mse_q25=lambda s: s.quantile(0.25),
        mse_q75=lambda s: s.quantile(0.75),
    )
    return summary.reset_index()


def run_sweep(
    spec: ExperimentSpec,
    settings: Settings | None = None,
    *,
    threads: int | None = None,
    out: Path | None = None,
    game: Game | None = None,
) -> SweepOutput:
    """Run every task of ``spec`` and write results, summary and timings CSVs."""
    cfg = settings or Settings()
    if spec.batch_size is not None:
        cfg = replace(cfg, batch_size=spec.batch_size)
    workers = threads or spec.threads or cfg.threads
    directory = Path(out or spec.out)

    owned = game is None
    sweep_game = game or parse_game_spec(spec.game, cfg)
    try:
        phi_star = reference_shapley(sweep_game) if spec.needs_exact else None
        if spec.needs_exact and phi_star is None:
            raise CapabilityError(
                f"metrics {sorted(set(spec.metrics) & {'mse', 'rank_corr'})} need exact values, "
                f"which are available for d <= {BRUTEFORCE_MAX_D} or analytic games",
                d=sweep_game.d,
            )
        reports = _theory_reports(spec, sweep_game) if "theory_report" in spec.metrics else {}
        tasks = build_tasks(spec)
        if not sweep_game.concurrent:
            workers = 1

        def run(task: SweepTask) -> tuple[dict[str, Any], float]:
            return _run_task(task, sweep_game, spec, phi_star, reports)

        if workers <= 1:
            outcomes = [run(task) for task in tasks]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(run, tasks))
    finally:
        if owned:
            sweep_game.close()

    rows = [row for row, _ in outcomes]
    results = pd.DataFrame(rows)
    results.insert(0, "game", spec.game)
    results.insert(1, "d", sweep_game.d)
    summary = summarize(results)
    timings = pd.DataFrame(
        {
            "task": [row["task"] for row in rows],
            "seed": [row["seed"] for row in rows],
            "seconds": [elapsed for _, elapsed in outcomes],
        }
    )

    directory.mkdir(parents=True, exist_ok=True)
    results.to_csv(directory / RESULTS_FILE, **_CSV_OPTIONS)
    summary.to_csv(directory / SUMMARY_FILE, **_CSV_OPTIONS)
    timings.to_csv(directory / TIMINGS_FILE, **_CSV_OPTIONS)
    failed = int((results["status"] != "ok").sum())
    log.info("sweep_finished", tasks=len(tasks), failed=failed, out=str(directory))
    return SweepOutput(results, summary, timings, directory)
