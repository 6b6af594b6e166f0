from __future__ import annotations

import logging

from models.schemas import CliConfig
from services.gradcheck import run_gradcheck_suite
from services.physcheck import run_physics_check

logger = logging.getLogger(__name__)


def run_gradcheck(config: CliConfig) -> int:
    report = run_gradcheck_suite(draws=config.draws, seed=config.check_seed)
    for case in report.cases:
        status = "ok" if case.passed else "FAIL"
        print(
            f"{status:4} {case.name:<20} draws={case.draws} "
            f"max_rel_err={case.max_relative_error:.3e} tol={case.tolerance:.0e}",
            flush=True,
        )
    if not report.passed:
        failed = [case.name for case in report.cases if not case.passed]
        logger.error("Gradient check failed for: %s", ", ".join(failed))
        return 1
    print(f"gradcheck passed ({len(report.cases)} cases)", flush=True)
    return 0


def run_physcheck(config: CliConfig) -> int:
    report = run_physics_check(pairs=config.pairs, seed=config.check_seed)
    print(
        f"pairs={report.pairs} max_abs_err={report.max_abs_error:.3e} "
        f"tol={report.tolerance:.0e} mirror_violations={report.mirror_violations}",
        flush=True,
    )
    if not report.passed:
        logger.error("Physics check failed")
        return 1
    print("physcheck passed", flush=True)
    return 0
