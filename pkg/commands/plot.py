from __future__ import annotations

from pathlib import Path

from models.schemas import CliConfig
from services.artifacts import read_csv, write_trace_plot


def default_plot_path(config: CliConfig) -> Path:
    name = "scores.svg" if config.metric == "score" else "losses.svg"
    return Path(config.inputs[0]).parent / name


def run_plot(config: CliConfig) -> int:
    traces = [read_csv(path) for path in config.inputs]
    traces.sort(key=lambda trace: trace.seed)
    path = write_trace_plot(traces, config.plot_path or default_plot_path(config), config.metric)
    print(f"wrote {path} ({len(traces)} trace(s))", flush=True)
    return 0
