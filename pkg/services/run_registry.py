from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from typing import Mapping, Optional

from sqlalchemy import select
from sqlalchemy.dialects.sqlite import insert
from sqlalchemy.orm import Session

from database import RunRecord, init_db, session_factory
from models.schemas import ArchitectureConfig, EpisodeTrace, TrainerConfig

UTC = timezone.utc


def config_digest(architecture: ArchitectureConfig, trainer: TrainerConfig) -> str:
    canonical = json.dumps(
        {"architecture": architecture.model_dump(mode="json"), "trainer": trainer.model_dump(mode="json")},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def record_run(
    db_session: Session,
    *,
    trace: EpisodeTrace,
    digest: str,
    csv_path: str,
    final_window: int = 100,
    recorded_at: Optional[datetime] = None,
) -> None:
    now = recorded_at or datetime.now(UTC)
    losses = [record.mean_loss for record in trace.records]
    values = {
        "algorithm": trace.algorithm,
        "seed": trace.seed,
        "config_digest": digest,
        "episodes": len(trace.records),
        "max_score": trace.max_score,
        "final_mean_score": trace.final_mean(final_window),
        "mean_loss": sum(losses) / len(losses) if losses else 0.0,
        "csv_path": csv_path,
    }
    db_session.execute(
        insert(RunRecord)
        .values(**values, run_count=1, created_at=now, updated_at=now)
        .on_conflict_do_update(
            index_elements=[RunRecord.algorithm, RunRecord.seed, RunRecord.config_digest],
            set_={
                "episodes": values["episodes"],
                "max_score": values["max_score"],
                "final_mean_score": values["final_mean_score"],
                "mean_loss": values["mean_loss"],
                "csv_path": csv_path,
                "run_count": RunRecord.run_count + 1,
                "updated_at": now,
            },
        )
    )


def record_runs(
    database_url: str,
    traces: list[EpisodeTrace],
    *,
    architectures: Mapping[str, ArchitectureConfig],
    trainer: TrainerConfig,
    csv_paths: Mapping[tuple[str, int], str],
    final_window: int = 100,
) -> int:
    """Upsert one registry row per trace in a single transaction."""
    init_db(database_url)
    with session_factory(database_url)() as db_session:
        try:
            for trace in traces:
                record_run(
                    db_session,
                    trace=trace,
                    digest=config_digest(architectures[trace.algorithm], trainer),
                    csv_path=csv_paths[(trace.algorithm, trace.seed)],
                    final_window=final_window,
                )
            db_session.commit()
        except Exception:
            db_session.rollback()
            raise
    return len(traces)


def list_runs(database_url: str, *, algorithm: Optional[str] = None) -> list[RunRecord]:
    init_db(database_url)
    stmt = select(RunRecord)
    if algorithm:
        stmt = stmt.where(RunRecord.algorithm == algorithm)
    stmt = stmt.order_by(RunRecord.algorithm, RunRecord.seed, RunRecord.updated_at.desc())
    with session_factory(database_url)() as db_session:
        return list(db_session.execute(stmt).scalars().all())
