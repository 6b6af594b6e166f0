from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from models.schemas import ArchitectureConfig

BASE_DIR = Path(__file__).resolve().parent.parent
ARCHITECTURES_PATH = BASE_DIR / "data" / "architectures.json"


@lru_cache()
def _load_presets() -> Dict[str, ArchitectureConfig]:
    if not ARCHITECTURES_PATH.exists():
        raise FileNotFoundError(f"Architecture presets not found: {ARCHITECTURES_PATH}")
    with ARCHITECTURES_PATH.open("r", encoding="utf-8") as fh:
        raw = json.load(fh)
    presets: Dict[str, ArchitectureConfig] = {}
    for variant, payload in raw.items():
        payload.setdefault("variant", variant)
        presets[variant] = ArchitectureConfig(**payload)
    return presets


def get_architecture(
    variant: str,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ArchitectureConfig:
    presets = _load_presets()
    if variant not in presets:
        raise KeyError(f"Unsupported algorithm: {variant}")
    preset = presets[variant]
    if not overrides:
        return preset.model_copy()
    return ArchitectureConfig(**{**preset.model_dump(), **dict(overrides), "variant": variant})


def list_algorithms() -> list[str]:
    return list(_load_presets())
