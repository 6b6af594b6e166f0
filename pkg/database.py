from __future__ import annotations

from functools import lru_cache
from pathlib import Path

from sqlalchemy import DateTime, Float, Integer, String, UniqueConstraint, create_engine, func
from sqlalchemy.engine import Engine
from sqlalchemy.engine.url import make_url
from sqlalchemy.orm import DeclarativeBase, Mapped, Session, mapped_column, sessionmaker


class Base(DeclarativeBase):
    pass


class RunRecord(Base):
    __tablename__ = "run_records"
    __table_args__ = (
        UniqueConstraint("algorithm", "seed", "config_digest", name="uq_algorithm_seed_config"),
    )

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    algorithm: Mapped[str] = mapped_column(String, index=True)
    seed: Mapped[int] = mapped_column(Integer, index=True)
    config_digest: Mapped[str] = mapped_column(String, nullable=False)
    episodes: Mapped[int] = mapped_column(Integer, nullable=False)
    max_score: Mapped[int] = mapped_column(Integer, nullable=False)
    final_mean_score: Mapped[float] = mapped_column(Float, nullable=False)
    mean_loss: Mapped[float] = mapped_column(Float, nullable=False)
    csv_path: Mapped[str] = mapped_column(String, nullable=False)
    run_count: Mapped[int] = mapped_column(Integer, default=1, nullable=False)
    created_at: Mapped[DateTime] = mapped_column(
        DateTime(timezone=True), server_default=func.now(), nullable=False
    )
    updated_at: Mapped[DateTime] = mapped_column(
        DateTime(timezone=True), server_default=func.now(), onupdate=func.now(), nullable=False
    )


@lru_cache()
def get_engine(database_url: str) -> Engine:
    url = make_url(database_url)
    if url.get_backend_name() == "sqlite" and url.database and url.database != ":memory:":
        Path(url.database).parent.mkdir(parents=True, exist_ok=True)
    return create_engine(database_url, future=True)


def session_factory(database_url: str) -> sessionmaker[Session]:
    return sessionmaker(get_engine(database_url), expire_on_commit=False)


def init_db(database_url: str) -> None:
    Base.metadata.create_all(get_engine(database_url))


__all__ = [
    "RunRecord",
    "get_engine",
    "init_db",
    "session_factory",
]
