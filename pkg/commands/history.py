from __future__ import annotations

from config import get_settings
from models.schemas import CliConfig, RunHistoryRecord
from services.run_registry import list_runs


def run_history(config: CliConfig) -> int:
    database_url = config.database_url or get_settings().registry_url(config.out_dir)
    algorithm = config.algorithms[0] if config.algorithms else None
    records = [RunHistoryRecord.model_validate(row) for row in list_runs(database_url, algorithm=algorithm)]
    if not records:
        print("no runs recorded", flush=True)
        return 0
    print("algorithm seed episodes max final_mean runs config", flush=True)
    for record in records:
        print(
            f"{record.algorithm:<9} {record.seed:>4} {record.episodes:>8} {record.max_score:>3} "
            f"{record.final_mean_score:>10.2f} {record.run_count:>4} {record.config_digest[:12]}",
            flush=True,
        )
    return 0
