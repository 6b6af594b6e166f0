from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Tuple

from config import get_settings
from models.schemas import CliConfig, RunArtifact, RunManifest, SuiteResult
from services.artifacts import write_atomic, write_csv, write_manifest, write_summary, write_trace_plot
from services.harness import run_suite, summarize
from services.run_registry import record_runs

logger = logging.getLogger(__name__)


def _relative(path: Path, root: Path) -> str:
    return Path(path).relative_to(root).as_posix()


def write_outputs(
    config: CliConfig,
    result: SuiteResult,
    checkpoints: Dict[Tuple[str, int], bytes],
) -> RunManifest:
    """Write CSVs, checkpoints, plots, summary and manifest under ``config.out_dir``."""
    out_dir = Path(config.out_dir)
    runs: List[RunArtifact] = []
    csv_paths: Dict[Tuple[str, int], str] = {}

    for trace in result.traces:
        run_dir = out_dir / trace.algorithm
        csv_path = write_csv(trace, run_dir / f"seed_{trace.seed}.csv", config.moving_average)
        checkpoint_path = None
        blob = checkpoints.get((trace.algorithm, trace.seed))
        if blob is not None:
            checkpoint_path = run_dir / f"seed_{trace.seed}.pql"
            write_atomic(checkpoint_path, blob)
        csv_paths[(trace.algorithm, trace.seed)] = str(csv_path)
        runs.append(
            RunArtifact(
                algorithm=trace.algorithm,
                seed=trace.seed,
                csv_path=_relative(csv_path, out_dir),
                checkpoint_path=_relative(checkpoint_path, out_dir) if checkpoint_path else None,
            )
        )

    plots: List[str] = []
    for algorithm in config.algorithms:
        traces = [trace for trace in result.traces if trace.algorithm == algorithm]
        for metric, name in (("score", "scores.svg"), ("mean_loss", "losses.svg")):
            plot_path = write_trace_plot(traces, out_dir / algorithm / name, metric)
            plots.append(_relative(plot_path, out_dir))

    summary_path = write_summary(summarize(result), out_dir / "summary.txt")
    manifest = RunManifest(
        subcommand=config.subcommand,
        trainer=config.trainer,
        architectures={algorithm: config.architectures[algorithm] for algorithm in config.algorithms},
        seeds=list(config.seeds),
        runs=runs,
        plots=plots,
        summary_path=_relative(summary_path, out_dir),
    )
    write_manifest(manifest, out_dir / "manifest.json")

    database_url = config.database_url or get_settings().registry_url(out_dir)
    recorded = record_runs(
        database_url,
        result.traces,
        architectures=config.architectures,
        trainer=config.trainer,
        csv_paths=csv_paths,
        final_window=result.final_window,
    )
    logger.info("Recorded %d run(s) in %s", recorded, database_url)
    return manifest


def _execute(config: CliConfig, jobs: int) -> int:
    checkpoints: Dict[Tuple[str, int], bytes] = {}
    result = run_suite(
        [config.architectures[algorithm] for algorithm in config.algorithms],
        config.trainer,
        config.seeds,
        jobs=jobs,
        checkpoints=checkpoints,
    )
    manifest = write_outputs(config, result, checkpoints)
    print(summarize(result), end="", flush=True)
    for run in manifest.runs:
        print(f"wrote {Path(config.out_dir) / run.csv_path}", flush=True)
    print(f"manifest: {Path(config.out_dir) / 'manifest.json'}", flush=True)
    return 0


def run_train(config: CliConfig) -> int:
    logger.info("Training %s seed=%d for %d episode(s)", config.algorithms[0], config.seeds[0], config.trainer.episodes)
    return _execute(config, jobs=1)


def run_suite_command(config: CliConfig) -> int:
    return _execute(config, jobs=config.jobs)
