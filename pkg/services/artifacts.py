from __future__ import annotations

import csv
import io
import math
import os
import re
import tempfile
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import List, Literal, Optional, Sequence

from models.schemas import EpisodeRecord, EpisodeTrace, RunManifest

CSV_HEADER = ["episode", "score", "mean_loss", "epsilon"]
FLOAT_FORMAT = ".12g"
DEFAULT_MOVING_AVERAGE = 50
XML_DECLARATION = '<?xml version="1.0" encoding="UTF-8"?>\n'

PLOT_WIDTH = 800
PLOT_HEIGHT = 480
MARGIN_LEFT = 70
MARGIN_RIGHT = 20
MARGIN_TOP = 40
MARGIN_BOTTOM = 60
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)

_SEED_PATTERN = re.compile(r"seed_(-?\d+)$")

Metric = Literal["score", "mean_loss"]


class ArtifactError(OSError):
    """Raised when an output file cannot be written or parsed."""


def write_atomic(path: Path, payload: str | bytes) -> None:
    path = Path(path)
    data = payload.encode("utf-8") if isinstance(payload, str) else payload
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp_name, path)
        except BaseException:
            Path(tmp_name).unlink(missing_ok=True)
            raise
    except OSError as exc:
        raise ArtifactError(f"Cannot write {path}: {exc}") from exc


def moving_average(values: Sequence[float], window: int) -> List[float]:
    """Trailing mean over up to ``window`` values ending at each index."""
    averages: List[float] = []
    running = 0.0
    for index, value in enumerate(values):
        running += value
        if index >= window:
            running -= values[index - window]
        averages.append(running / min(index + 1, window))
    return averages


# --- CSV ------------------------------------------------------------------------

def format_trace_csv(trace: EpisodeTrace, moving_average_window: Optional[int] = None) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    header = list(CSV_HEADER)
    smoothed: List[float] = []
    if moving_average_window:
        header.append(f"score_ma{moving_average_window}")
        smoothed = moving_average(trace.scores, moving_average_window)
    writer.writerow(header)
    for index, record in enumerate(trace.records):
        row = [
            str(record.episode),
            str(record.score),
            format(record.mean_loss, FLOAT_FORMAT),
            format(record.epsilon, FLOAT_FORMAT),
        ]
        if moving_average_window:
            row.append(format(smoothed[index], FLOAT_FORMAT))
        writer.writerow(row)
    return buffer.getvalue()


def write_csv(trace: EpisodeTrace, path: Path, moving_average_window: Optional[int] = None) -> Path:
    write_atomic(Path(path), format_trace_csv(trace, moving_average_window))
    return Path(path)


def trace_identity(path: Path) -> tuple[str, int]:
    """Algorithm and seed from the ``<algorithm>/seed_<n>.csv`` layout."""
    path = Path(path)
    match = _SEED_PATTERN.search(path.stem)
    if match is None:
        raise ArtifactError(f"Cannot infer seed from file name: {path}")
    return path.parent.name or "unknown", int(match.group(1))


def read_csv(path: Path, algorithm: Optional[str] = None, seed: Optional[int] = None) -> EpisodeTrace:
    path = Path(path)
    if algorithm is None or seed is None:
        inferred_algorithm, inferred_seed = trace_identity(path)
        algorithm = algorithm or inferred_algorithm
        seed = inferred_seed if seed is None else seed
    try:
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(CSV_HEADER) - set(reader.fieldnames or [])
            if missing:
                raise ArtifactError(f"{path} is missing columns: {', '.join(sorted(missing))}")
            records = [
                EpisodeRecord(
                    episode=int(row["episode"]),
                    score=int(row["score"]),
                    mean_loss=float(row["mean_loss"]),
                    epsilon=float(row["epsilon"]),
                )
                for row in reader
            ]
    except OSError as exc:
        if isinstance(exc, ArtifactError):
            raise
        raise ArtifactError(f"Cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ArtifactError(f"Malformed trace file {path}: {exc}") from exc
    return EpisodeTrace(algorithm=algorithm, seed=seed, records=records)


# --- SVG ------------------------------------------------------------------------

def _axis_max(value: float) -> float:
    """Round up to 1, 2 or 5 times a power of ten."""
    if value <= 0:
        return 1.0
    magnitude = 10.0 ** math.floor(math.log10(value))
    for step in (1, 2, 5, 10):
        if step * magnitude >= value:
            return step * magnitude
    return 10 * magnitude


def build_trace_svg(traces: Sequence[EpisodeTrace], metric: Metric = "score", title: Optional[str] = None) -> ET.Element:
    if not traces:
        raise ValueError("At least one trace is required for a plot")
    algorithms = {trace.algorithm for trace in traces}
    if len(algorithms) != 1:
        raise ValueError(f"All traces in one plot must share an algorithm, got {sorted(algorithms)}")
    algorithm = algorithms.pop()

    series = [[float(getattr(record, metric)) for record in trace.records] for trace in traces]
    y_low = min(0.0, min((min(values) for values in series if values), default=0.0))
    y_high = _axis_max(max((max(values) for values in series if values), default=0.0))
    episodes = max(len(values) for values in series)
    x_high = max(episodes, 1)

    plot_width = PLOT_WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_height = PLOT_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(episode: float) -> float:
        return MARGIN_LEFT + (episode - 1) / max(x_high - 1, 1) * plot_width

    def py(value: float) -> float:
        return MARGIN_TOP + plot_height - (value - y_low) / (y_high - y_low) * plot_height

    root = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": str(PLOT_WIDTH),
            "height": str(PLOT_HEIGHT),
            "viewBox": f"0 0 {PLOT_WIDTH} {PLOT_HEIGHT}",
            "data-y-max": format(y_high, "g"),
        },
    )
    label = "Score" if metric == "score" else "Mean loss"
    heading = ET.SubElement(root, "text", {"x": str(PLOT_WIDTH / 2), "y": "24", "text-anchor": "middle"})
    heading.text = title or f"{algorithm}: {label} vs Episodes"

    axes = ET.SubElement(root, "g", {"stroke": "#000", "stroke-width": "1"})
    ET.SubElement(axes, "line", {"x1": str(MARGIN_LEFT), "y1": str(MARGIN_TOP), "x2": str(MARGIN_LEFT), "y2": str(MARGIN_TOP + plot_height)})
    ET.SubElement(
        axes,
        "line",
        {"x1": str(MARGIN_LEFT), "y1": str(MARGIN_TOP + plot_height), "x2": str(MARGIN_LEFT + plot_width), "y2": str(MARGIN_TOP + plot_height)},
    )

    ticks = ET.SubElement(root, "g", {"font-size": "11"})
    for fraction in (0.0, 0.25, 0.5, 0.75, 1.0):
        value = y_low + fraction * (y_high - y_low)
        tick = ET.SubElement(ticks, "text", {"x": str(MARGIN_LEFT - 6), "y": f"{py(value) + 4:.1f}", "text-anchor": "end"})
        tick.text = format(value, "g")
        episode = 1 + fraction * (x_high - 1)
        tick = ET.SubElement(
            ticks, "text", {"x": f"{px(episode):.1f}", "y": str(MARGIN_TOP + plot_height + 16), "text-anchor": "middle"}
        )
        tick.text = str(int(round(episode)))

    x_label = ET.SubElement(root, "text", {"x": str(MARGIN_LEFT + plot_width / 2), "y": str(PLOT_HEIGHT - 16), "text-anchor": "middle"})
    x_label.text = "Episodes"
    y_label = ET.SubElement(
        root,
        "text",
        {"x": "18", "y": str(MARGIN_TOP + plot_height / 2), "text-anchor": "middle", "transform": f"rotate(-90 18 {MARGIN_TOP + plot_height / 2})"},
    )
    y_label.text = label

    lines = ET.SubElement(root, "g", {"fill": "none", "stroke-width": "1"})
    for index, (trace, values) in enumerate(zip(traces, series)):
        points = " ".join(f"{px(episode):.2f},{py(value):.2f}" for episode, value in enumerate(values, start=1))
        ET.SubElement(
            lines,
            "polyline",
            {"points": points, "stroke": PALETTE[index % len(PALETTE)], "data-seed": str(trace.seed)},
        )
    return root


def write_trace_plot(
    traces: Sequence[EpisodeTrace],
    path: Path,
    metric: Metric = "score",
    title: Optional[str] = None,
) -> Path:
    root = build_trace_svg(traces, metric, title)
    payload = XML_DECLARATION + ET.tostring(root, encoding="unicode")
    write_atomic(Path(path), payload + "\n")
    return Path(path)


# --- manifest and summary -------------------------------------------------------

def write_manifest(manifest: RunManifest, path: Path) -> Path:
    write_atomic(Path(path), manifest.model_dump_json(indent=2) + "\n")
    return Path(path)


def write_summary(text: str, path: Path) -> Path:
    write_atomic(Path(path), text)
    return Path(path)
