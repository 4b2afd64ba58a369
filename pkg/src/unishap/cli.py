"""``unishap`` command line.

Subcommands:
    estimate       one estimate; writes phi.csv and phi.json
    sweep          a spec file's grid over its seeds; writes results, summary and timings CSVs
    faithfulness   insertion/deletion AUC and rank correlation per (method, m, seed)

Exit codes: 0 success, 2 configuration error, 3 game failure, 4 capability
exceeded. Failures print a one-line JSON error envelope on stderr.
"""
from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
import pandas as pd
import structlog

from unishap.diagnostics import faithfulness_report
from unishap.errors import ConfigError, UnishapError
from unishap.estimators import (
    DEFAULT_M,
    PRESET_NAMES,
    EstimatorConfig,
    EstimatorKind,
    LambdaMode,
    error_estimate,
    estimate,
    preset,
)
from unishap.logging_config import configure_logging
from unishap.sampling import Strategy
from unishap.seeding import DEFAULT_SEED
from unishap.settings import DEFAULT_MAXVAL, Settings
from unishap.specs import load_experiment_spec, parse_game_spec, parse_seeds
from unishap.sweep import reference_shapley, run_sweep

log = structlog.get_logger(__name__)

PHI_FILE = "phi.csv"
METADATA_FILE = "phi.json"
METRICS_FILE = "metrics.csv"

_CSV_OPTIONS: dict[str, Any] = {"index": False, "lineterminator": "\n", "float_format": "%.17g"}


def _add_runtime_flags(parser: argparse.ArgumentParser, settings: Settings) -> None:
    parser.add_argument(
        "--threads",
        type=int,
        default=settings.threads,
        help="worker threads (default: UNISHAP_THREADS or 1)",
    )
    parser.add_argument("--batch-size", type=int, default=settings.batch_size)
    parser.add_argument("--maxval", type=float, default=settings.maxval)


def _add_estimator_flags(parser: argparse.ArgumentParser, *, repeat: bool = False) -> None:
    if repeat:
        parser.add_argument("--preset", action="append", choices=PRESET_NAMES)
        parser.add_argument("--m", type=int, action="append")
    else:
        parser.add_argument("--preset", choices=PRESET_NAMES)
        parser.add_argument("--m", type=int, default=DEFAULT_M)
        parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--kind", choices=[k.value for k in EstimatorKind])
    parser.add_argument("--tau", type=float)
    parser.add_argument("--strategy", choices=["with", "without"])
    parser.add_argument("--paired", action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument("--lambda", dest="lam", help="alpha, zero or a number")


def build_parser(settings: Settings | None = None) -> argparse.ArgumentParser:
    cfg = settings or Settings()
    parser = argparse.ArgumentParser(
        prog="unishap", description="Model-agnostic Shapley value estimation."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate Shapley values for one game")
    est.add_argument(
        "--game", required=True, help="game spec, e.g. adversarial:d=64,n=2,xi=1,chi=0"
    )
    _add_estimator_flags(est)
    est.add_argument("--out", type=Path, default=Path("."))
    est.add_argument(
        "--reference-m",
        type=int,
        help="also run at this budget (>= 10x --m) and record the error estimate",
    )
    _add_runtime_flags(est, cfg)

    swp = sub.add_parser("sweep", help="run an experiment spec file")
    swp.add_argument("spec", type=Path)
    swp.add_argument("--out", type=Path)
    swp.add_argument("--threads", type=int)

    faith = sub.add_parser("faithfulness", help="insertion/deletion AUC and rank correlation")
    faith.add_argument("--game", required=True)
    _add_estimator_flags(faith, repeat=True)
    faith.add_argument("--seeds", default="0", help="seed or inclusive range a..b")
    faith.add_argument("--top-k", type=int)
    faith.add_argument("--phi", type=Path, help="score an existing phi.csv instead of estimating")
    faith.add_argument("--out", type=Path, default=Path("."))
    _add_runtime_flags(faith, cfg)
    return parser


def _explicit_config(args: argparse.Namespace, base: EstimatorConfig) -> EstimatorConfig:
    """``base`` with every estimator flag the user actually passed applied on top."""
    overrides: dict[str, Any] = {}
    if args.kind is not None:
        overrides["kind"] = EstimatorKind.parse(args.kind)
    if args.tau is not None:
        overrides["tau"] = args.tau
    if args.strategy is not None:
        overrides["strategy"] = Strategy.parse(args.strategy)
    if args.paired is not None:
        overrides["paired"] = args.paired
    if args.lam is not None:
        overrides["lambda_mode"] = LambdaMode.parse(args.lam)
    return replace(base, **overrides) if overrides else base


def default_config(
    m: int = DEFAULT_M, seed: int = DEFAULT_SEED, maxval: float = DEFAULT_MAXVAL
) -> EstimatorConfig:
    """Paired regression on leverage scores with replacement, lambda = alpha."""
    return EstimatorConfig(
        EstimatorKind.REGRESSION,
        0.0,
        Strategy.WITH_REPLACEMENT,
        True,
        LambdaMode("alpha"),
        m=m,
        seed=seed,
        maxval=maxval,
    )


def resolve_config(
    args: argparse.Namespace, preset_name: str | None, m: int, seed: int
) -> EstimatorConfig:
    if preset_name:
        base = preset(preset_name, m=m, seed=seed, maxval=args.maxval)
    else:
        base = default_config(m, seed, args.maxval)
    return _explicit_config(args, base)


def _settings_from(args: argparse.Namespace, settings: Settings) -> Settings:
    overrides = {
        name: getattr(args, name)
        for name in ("threads", "batch_size", "maxval")
        if getattr(args, name, None) is not None
    }
    return replace(settings, **overrides)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def run_estimate(args: argparse.Namespace, settings: Settings) -> int:
    config = resolve_config(args, args.preset, args.m, args.seed)
    game = parse_game_spec(args.game, settings)
    try:
        result = estimate(game, config, workers=settings.threads)
        extra: dict[str, Any] = {"game": args.game}
        if args.reference_m is not None:
            reference_config = config.with_budget(m=args.reference_m)
            reference = estimate(game, reference_config, workers=settings.threads)
            err = error_estimate(result, reference)
            extra.update(error_estimate=err.value, error_ratio=err.ratio)
    finally:
        game.close()
    args.out.mkdir(parents=True, exist_ok=True)
    result.to_csv(args.out / PHI_FILE)
    result.write_metadata(args.out / METADATA_FILE, **extra)
    log.info("estimate_written", out=str(args.out), d=result.d, rows=result.rows)
    return 0


def run_sweep_command(args: argparse.Namespace, settings: Settings) -> int:
    spec = load_experiment_spec(args.spec, settings)
    output = run_sweep(spec, settings, threads=args.threads, out=args.out)
    failed = int((output.results["status"] != "ok").sum())
    log.info("sweep_written", out=str(output.directory), rows=len(output.results), failed=failed)
    return 0


def _read_phi(path: Path, d: int) -> npt.NDArray[np.float64]:
    if not path.is_file():
        raise ConfigError(f"attribution file not found: {path}", path=str(path))
    frame = pd.read_csv(path, float_precision="round_trip")
    if list(frame.columns) != ["feature", "phi"] or len(frame) != d:
        raise ConfigError(
            f"attribution file must have header 'feature,phi' and {d} rows", path=str(path)
        )
    return frame.sort_values("feature")["phi"].to_numpy(dtype=np.float64)


def run_faithfulness(args: argparse.Namespace, settings: Settings) -> int:
    game = parse_game_spec(args.game, settings)
    records: list[dict[str, Any]] = []
    # Rows that did not come from an estimator leave the config columns blank.
    no_config = dict.fromkeys(default_config().as_record(), "")
    try:
        phi_star = reference_shapley(game)
        if phi_star is not None:
            report = faithfulness_report(game, phi_star, args.top_k, phi_star)
            records.append({"method": "exact", **no_config, **report.as_record()})
        if args.phi is not None:
            phi = _read_phi(args.phi, game.d)
            report = faithfulness_report(game, phi, args.top_k, phi_star)
            records.append({"method": str(args.phi), **no_config, **report.as_record()})
        else:
            presets: list[str | None] = list(args.preset or [])
            if not presets:
                presets = [None] if args.kind or args.tau is not None else list(PRESET_NAMES)
            for name in presets:
                for m in args.m or [DEFAULT_M]:
                    for seed in parse_seeds([args.seeds]):
                        config = resolve_config(args, name, m, seed)
                        result = estimate(game, config, workers=settings.threads)
                        report = faithfulness_report(game, result.phi, args.top_k, phi_star)
                        records.append(
                            {
                                "method": name or config.kind.value,
                                **config.as_record(),
                                **report.as_record(),
                            }
                        )
    finally:
        game.close()
    args.out.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(records).to_csv(args.out / METRICS_FILE, **_CSV_OPTIONS)
    log.info("faithfulness_written", out=str(args.out), rows=len(records))
    return 0


_COMMANDS = {
    "estimate": run_estimate,
    "sweep": run_sweep_command,
    "faithfulness": run_faithfulness,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        settings = Settings.from_env()
        configure_logging(settings.log_level, settings.log_format)
        args = build_parser(settings).parse_args(argv)
        return _COMMANDS[args.command](args, _settings_from(args, settings))
    except UnishapError as exc:
        sys.stderr.write(json.dumps(exc.to_envelope(), sort_keys=True) + "\n")
        return exc.category.exit_code


if __name__ == "__main__":
    sys.exit(main())
