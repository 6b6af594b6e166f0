from __future__ import annotations

import logging
import sys
from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class Config(BaseSettings):
    """Process configuration loaded from environment variables."""

    out_dir: Path = Field(default=Path("runs"), alias="POLECART_OUT")
    database_url: Optional[str] = Field(default=None, alias="POLECART_DATABASE_URL")
    log_level: str = Field(default="INFO", alias="POLECART_LOG_LEVEL")
    jobs: int = Field(default=1, ge=1, alias="POLECART_JOBS")

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=False, populate_by_name=True)

    @field_validator("log_level", mode="before")
    @classmethod
    def _normalise_level(cls, value: Optional[str]) -> str:
        if value is None or value == "":
            return "INFO"
        level = str(value).strip().upper()
        if level not in getattr(logging, "getLevelNamesMapping", lambda: dict(logging._nameToLevel))():
            raise ValueError(f"Unknown log level: {value}")
        return level

    def registry_url(self, out_dir: Optional[Path] = None) -> str:
        if self.database_url:
            return self.database_url
        return f"sqlite:///{(out_dir or self.out_dir) / 'runs.db'}"


@lru_cache()
def get_settings() -> Config:
    return Config()


def configure_logging(level: Optional[str] = None) -> None:
    root = logging.getLogger()
    resolved = (level or get_settings().log_level).upper()
    handler = next((h for h in root.handlers if getattr(h, "_polecart", False)), None)
    if handler is None:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._polecart = True  # type: ignore[attr-defined]
        root.addHandler(handler)
    else:
        handler.setStream(sys.stderr)
    root.setLevel(resolved)


settings = get_settings()
