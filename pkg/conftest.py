import logging
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from config import get_settings
from models.schemas import EpsilonSchedule, TrainerConfig

settings.register_profile("fast", max_examples=25, deadline=None)
settings.register_profile(
    "ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))

np.seterr(all="warn")


def pytest_collection_modifyitems(config, items):
    if os.getenv("POLECART_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set POLECART_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def out_dir(tmp_path: Path) -> Path:
    return tmp_path / "runs"


@pytest.fixture
def registry_url(tmp_path: Path) -> str:
    return f"sqlite:///{tmp_path / 'registry' / 'runs.db'}"


@pytest.fixture
def tiny_trainer() -> TrainerConfig:
    """A trainer that starts learning within the first episode."""
    return TrainerConfig(
        episodes=3,
        batch_size=4,
        buffer_capacity=64,
        train_start_size=8,
        target_sync_interval=5,
        episode_cap=40,
        window_length=4,
        epsilon=EpsilonSchedule(eps_start=1.0, eps_end=0.1, decay_steps=50),
    )


@pytest.fixture(autouse=True)
def isolated_settings(monkeypatch, tmp_path):
    for name in ("POLECART_OUT", "POLECART_DATABASE_URL", "POLECART_LOG_LEVEL", "POLECART_JOBS"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.chdir(tmp_path)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()
    root = logging.getLogger()
    for handler in [h for h in root.handlers if getattr(h, "_polecart", False)]:
        root.removeHandler(handler)
