import logging

import pytest
from pydantic import ValidationError

from config import Config, configure_logging, get_settings


def test_defaults():
    settings = get_settings()

    assert str(settings.out_dir) == "runs"
    assert settings.log_level == "INFO"
    assert settings.jobs == 1
    assert settings.registry_url() == "sqlite:///runs/runs.db"


def test_environment_overrides(monkeypatch, tmp_path):
    monkeypatch.setenv("POLECART_OUT", str(tmp_path))
    monkeypatch.setenv("POLECART_LOG_LEVEL", "debug")
    monkeypatch.setenv("POLECART_JOBS", "4")

    settings = Config()

    assert settings.out_dir == tmp_path
    assert settings.log_level == "DEBUG"
    assert settings.jobs == 4


def test_explicit_database_url_wins(monkeypatch):
    monkeypatch.setenv("POLECART_DATABASE_URL", "sqlite:///:memory:")

    assert Config().registry_url() == "sqlite:///:memory:"


@pytest.mark.parametrize("name, value", [("POLECART_LOG_LEVEL", "chatty"), ("POLECART_JOBS", "0")])
def test_invalid_environment_is_rejected(monkeypatch, name, value):
    monkeypatch.setenv(name, value)

    with pytest.raises(ValidationError):
        Config()


def test_configure_logging_installs_one_handler():
    configure_logging("warning")
    configure_logging("info")

    root = logging.getLogger()
    assert sum(1 for handler in root.handlers if getattr(handler, "_polecart", False)) == 1
    assert root.level == logging.INFO
