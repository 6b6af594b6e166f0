from __future__ import annotations

from datetime import datetime
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Variant = Literal["dqn", "drqn", "dtqn"]
Subcommand = Literal["train", "suite", "plot", "gradcheck", "physcheck", "history"]


# --- Network and trainer configuration ------------------------------------------

class ArchitectureConfig(BaseModel):
    """Sizes of one Q-network. Only the fields of the selected variant are used."""

    model_config = ConfigDict(extra="forbid")

    variant: Variant
    window_length: int = Field(default=4, ge=1)
    hidden_dim: int = Field(default=64, gt=0)
    gru_input_dim: int = Field(default=16, gt=0)
    gru_hidden_dim: int = Field(default=64, gt=0)
    model_dim: int = Field(default=32, gt=0)
    n_heads: int = Field(default=2, gt=0)
    n_layers: int = Field(default=2, gt=0)
    feedforward_dim: int = Field(default=64, gt=0)
    positional_encoding: bool = True
    readout: Literal["final", "mean"] = "final"
    layer_norm_eps: float = Field(default=1e-5, gt=0)

    @model_validator(mode="after")
    def validate_heads(self) -> "ArchitectureConfig":
        if self.variant == "dtqn" and self.model_dim % self.n_heads != 0:
            raise ValueError(f"model_dim {self.model_dim} is not divisible by n_heads {self.n_heads}")
        return self


class EpsilonSchedule(BaseModel):
    """Linear decay from ``eps_start`` to ``eps_end`` over ``decay_steps`` steps."""

    model_config = ConfigDict(extra="forbid")

    eps_start: float = Field(default=1.0, ge=0, le=1)
    eps_end: float = Field(default=0.05, ge=0, le=1)
    decay_steps: int = Field(default=10_000, ge=1)

    @model_validator(mode="after")
    def validate_order(self) -> "EpsilonSchedule":
        if self.eps_end > self.eps_start:
            raise ValueError(f"eps_end {self.eps_end} exceeds eps_start {self.eps_start}")
        return self

    def value(self, step: int) -> float:
        fraction = min(max(step, 0) / self.decay_steps, 1.0)
        return max(self.eps_end, self.eps_start + (self.eps_end - self.eps_start) * fraction)


class TrainerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gamma: float = Field(default=0.99, ge=0, lt=1)
    target_sync_interval: int = Field(default=100, ge=1)
    batch_size: int = Field(default=32, ge=1)
    buffer_capacity: int = Field(default=10_000, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    window_length: int = Field(default=4, ge=1)
    episodes: int = Field(default=1500, ge=1)
    train_start_size: int = Field(default=500, ge=1)
    episode_cap: int = Field(default=500, ge=1)
    epsilon: EpsilonSchedule = Field(default_factory=EpsilonSchedule)
    log_every: int = Field(default=100, ge=1)

    @model_validator(mode="after")
    def validate_buffer(self) -> "TrainerConfig":
        if self.batch_size > self.buffer_capacity:
            raise ValueError(
                f"batch_size {self.batch_size} exceeds buffer_capacity {self.buffer_capacity}"
            )
        if self.train_start_size > self.buffer_capacity:
            raise ValueError(
                f"train_start_size {self.train_start_size} exceeds buffer_capacity {self.buffer_capacity}"
            )
        if self.train_start_size < self.batch_size:
            raise ValueError(
                f"train_start_size {self.train_start_size} is smaller than batch_size {self.batch_size}"
            )
        return self


# --- Experiment records ------------------------------------------------------------

class EpisodeRecord(BaseModel):
    episode: int = Field(..., ge=1)
    score: int = Field(..., ge=0)
    mean_loss: float
    epsilon: float = Field(..., ge=0, le=1)


class EpisodeTrace(BaseModel):
    algorithm: str
    seed: int
    records: List[EpisodeRecord] = Field(default_factory=list)

    @model_validator(mode="after")
    def validate_contiguous(self) -> "EpisodeTrace":
        for expected, record in enumerate(self.records, start=1):
            if record.episode != expected:
                raise ValueError(f"Episode indices must be contiguous from 1; found {record.episode} at {expected}")
        return self

    @property
    def scores(self) -> List[int]:
        return [record.score for record in self.records]

    @property
    def max_score(self) -> int:
        return max(self.scores, default=0)

    def final_mean(self, window: int = 100) -> float:
        tail = self.scores[-window:]
        return sum(tail) / len(tail) if tail else 0.0


class AlgorithmSummary(BaseModel):
    algorithm: str
    seeds: List[int]
    mean_final_score: float
    max_score: int
    per_seed_max: Dict[int, int]
    per_seed_final_mean: Dict[int, float]
    seeds_above_baseline: int


class SuiteResult(BaseModel):
    traces: List[EpisodeTrace]
    summaries: List[AlgorithmSummary]
    baseline: float
    final_window: int = 100

    def summary_for(self, algorithm: str) -> Optional[AlgorithmSummary]:
        return next((summary for summary in self.summaries if summary.algorithm == algorithm), None)


class RunArtifact(BaseModel):
    algorithm: str
    seed: int
    csv_path: str
    checkpoint_path: Optional[str] = None


class RunHistoryRecord(BaseModel):
    model_config = ConfigDict(from_attributes=True)

    algorithm: str
    seed: int
    config_digest: str
    episodes: int
    max_score: int
    final_mean_score: float
    mean_loss: float
    csv_path: str
    run_count: int
    created_at: datetime
    updated_at: datetime


class RunManifest(BaseModel):
    subcommand: str
    trainer: TrainerConfig
    architectures: Dict[str, ArchitectureConfig]
    seeds: List[int]
    runs: List[RunArtifact]
    plots: List[str] = Field(default_factory=list)
    summary_path: Optional[str] = None


# --- Verification reports ------------------------------------------------------------

class GradCheckCase(BaseModel):
    name: str
    draws: int
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


class GradCheckReport(BaseModel):
    cases: List[GradCheckCase]

    @property
    def passed(self) -> bool:
        return all(case.passed for case in self.cases)


class PhysicsCheckReport(BaseModel):
    pairs: int
    max_abs_error: float
    tolerance: float
    mirror_violations: int

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tolerance and self.mirror_violations == 0


# --- CLI -------------------------------------------------------------------------

class CliFileConfig(BaseModel):
    """Schema of the JSON file accepted by ``--config``."""

    model_config = ConfigDict(extra="forbid")

    algorithms: Optional[List[Variant]] = None
    seeds: Optional[List[int]] = None
    jobs: Optional[int] = Field(default=None, ge=1)
    out_dir: Optional[Path] = None
    moving_average: Optional[int] = Field(default=None, ge=1)
    trainer: Dict[str, object] = Field(default_factory=dict)
    architectures: Dict[Variant, Dict[str, object]] = Field(default_factory=dict)


class CliConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subcommand: Subcommand
    algorithms: List[Variant] = Field(default_factory=lambda: ["dqn", "drqn", "dtqn"])
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    trainer: TrainerConfig = Field(default_factory=TrainerConfig)
    architectures: Dict[str, ArchitectureConfig] = Field(default_factory=dict)
    out_dir: Path = Path("runs")
    jobs: int = Field(default=1, ge=1)
    moving_average: Optional[int] = Field(default=None, ge=1)
    inputs: List[Path] = Field(default_factory=list)
    plot_path: Optional[Path] = None
    metric: Literal["score", "mean_loss"] = "score"
    draws: int = Field(default=20, ge=1)
    pairs: int = Field(default=1000, ge=1)
    check_seed: int = 0
    database_url: Optional[str] = None
    config_file: Optional[Path] = None

    @field_validator("algorithms", "seeds")
    @classmethod
    def validate_unique(cls, values: list) -> list:
        duplicates = sorted({str(value) for value in values if values.count(value) > 1})
        if duplicates:
            raise ValueError(f"duplicate entries: {', '.join(duplicates)}")
        return values

    @model_validator(mode="after")
    def validate_selection(self) -> "CliConfig":
        if self.subcommand in {"train", "suite"}:
            if not self.algorithms:
                raise ValueError("At least one algorithm is required")
            if not self.seeds:
                raise ValueError("At least one seed is required")
        if self.subcommand == "plot" and not self.inputs:
            raise ValueError("plot requires at least one input CSV")
        return self
