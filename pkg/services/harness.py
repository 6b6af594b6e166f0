"""Multi-seed training runs, suite aggregation and the text summary."""
from __future__ import annotations

import logging
from concurrent.futures import FIRST_EXCEPTION, ProcessPoolExecutor, wait
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from models.schemas import (
    AlgorithmSummary,
    ArchitectureConfig,
    EpisodeRecord,
    EpisodeTrace,
    SuiteResult,
    TrainerConfig,
)
from services.agent import QLearner
from services.cartpole import EPISODE_CAP, Action, CartPoleEnv
from services.parameters import encode_checkpoint
from services.qnets import count_parameters

logger = logging.getLogger(__name__)

INIT_STREAM_OFFSET = 0
ENV_STREAM_OFFSET = 1000
ACTION_STREAM_OFFSET = 2000
FINAL_WINDOW = 100
BASELINE_EPISODES = 100
BASELINE_SEED = 0
PROTOCOL_MAX_SCORE = 100


class HarnessError(RuntimeError):
    """Raised when a training run fails; carries the run identity."""

    def __init__(self, algorithm: str, seed: int, message: str):
        super().__init__(f"algorithm={algorithm} seed={seed}: {message}")
        self.algorithm = algorithm
        self.seed = seed


class SeedStreams(NamedTuple):
    init: np.random.Generator
    env: np.random.Generator
    action: np.random.Generator


def seed_streams(seed: int) -> SeedStreams:
    """Independent generators for parameter init, env resets and acting/sampling."""
    return SeedStreams(
        init=np.random.default_rng(seed + INIT_STREAM_OFFSET),
        env=np.random.default_rng(seed + ENV_STREAM_OFFSET),
        action=np.random.default_rng(seed + ACTION_STREAM_OFFSET),
    )


def run_training(
    architecture: ArchitectureConfig,
    trainer: TrainerConfig,
    seed: int,
    learner_out: Optional[List[QLearner]] = None,
) -> EpisodeTrace:
    streams = seed_streams(seed)
    learner = QLearner(architecture, trainer, init_rng=streams.init, action_rng=streams.action)
    env = CartPoleEnv(streams.env, episode_cap=trainer.episode_cap)
    algorithm = architecture.variant

    records: List[EpisodeRecord] = []
    for episode in range(1, trainer.episodes + 1):
        outcome = learner.run_episode(env)
        records.append(
            EpisodeRecord(
                episode=episode,
                score=outcome.score,
                mean_loss=outcome.mean_loss,
                epsilon=outcome.epsilon,
            )
        )
        if episode % trainer.log_every == 0:
            logger.info(
                "%s seed=%d episode=%d score=%d epsilon=%.3f loss=%.5f",
                algorithm,
                seed,
                episode,
                outcome.score,
                outcome.epsilon,
                outcome.mean_loss,
            )

    if learner_out is not None:
        learner_out.append(learner)
    return EpisodeTrace(algorithm=algorithm, seed=seed, records=records)


def _training_job(payload: Tuple[dict, dict, int]) -> Tuple[dict, Dict[str, bytes]]:
    """Process-pool entry point: plain data in, plain data out."""
    architecture_data, trainer_data, seed = payload
    architecture = ArchitectureConfig(**architecture_data)
    learners: List[QLearner] = []
    trace = run_training(architecture, TrainerConfig(**trainer_data), seed, learners)
    return trace.model_dump(), {"params": encode_checkpoint(learners[0].params)}


def _run_one(architecture: ArchitectureConfig, trainer: TrainerConfig, seed: int) -> Tuple[EpisodeTrace, bytes]:
    try:
        trace_data, blobs = _training_job((architecture.model_dump(), trainer.model_dump(), seed))
    except Exception as exc:
        raise HarnessError(architecture.variant, seed, str(exc)) from exc
    return EpisodeTrace(**trace_data), blobs["params"]


def run_suite(
    algorithms: Sequence[ArchitectureConfig],
    trainer: TrainerConfig,
    seeds: Sequence[int],
    *,
    jobs: int = 1,
    checkpoints: Optional[Dict[Tuple[str, int], bytes]] = None,
) -> SuiteResult:
    """Train every (algorithm, seed) pair and merge results by key."""
    if not algorithms:
        raise ValueError("run_suite needs at least one algorithm")
    if not seeds:
        raise ValueError("run_suite needs at least one seed")
    variants = [architecture.variant for architecture in algorithms]
    if len(set(variants)) != len(variants):
        raise ValueError(f"Duplicate algorithms in suite: {variants}")

    jobs_list = [(architecture, seed) for architecture in algorithms for seed in seeds]
    results: Dict[Tuple[str, int], Tuple[EpisodeTrace, bytes]] = {}
    logger.info("Suite: %d runs (%s x %d seeds) on %d worker(s)", len(jobs_list), ",".join(variants), len(seeds), jobs)
    for variant, count in count_parameters(algorithms).items():
        logger.info("%s: %d trainable parameters", variant, count)

    if jobs <= 1:
        for architecture, seed in jobs_list:
            results[(architecture.variant, seed)] = _run_one(architecture, trainer, seed)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_training_job, (architecture.model_dump(), trainer.model_dump(), seed)): (
                    architecture.variant,
                    seed,
                )
                for architecture, seed in jobs_list
            }
            done, _ = wait(futures, return_when=FIRST_EXCEPTION)
            for future in done:
                algorithm, seed = futures[future]
                exc = future.exception()
                if exc is not None:
                    for pending in futures:
                        pending.cancel()
                    logger.error("Run failed: algorithm=%s seed=%d: %s", algorithm, seed, exc)
                    raise HarnessError(algorithm, seed, str(exc)) from exc
            for future, (algorithm, seed) in futures.items():
                trace_data, blobs = future.result()
                results[(algorithm, seed)] = (EpisodeTrace(**trace_data), blobs["params"])

    ordered_keys = [(architecture.variant, seed) for architecture, seed in jobs_list]
    traces = [results[key][0] for key in ordered_keys]
    if checkpoints is not None:
        for key in ordered_keys:
            checkpoints[key] = results[key][1]
    return build_suite_result(traces, random_baseline(episode_cap=trainer.episode_cap))


def random_baseline(
    episodes: int = BASELINE_EPISODES,
    seed: int = BASELINE_SEED,
    episode_cap: int = EPISODE_CAP,
) -> float:
    """Mean score of a uniform random policy."""
    streams = seed_streams(seed)
    env = CartPoleEnv(streams.env, episode_cap=episode_cap)
    total = 0
    for _ in range(episodes):
        env.reset()
        while True:
            _, outcome = env.step(Action(int(streams.action.integers(0, 2))))
            if outcome.reward > 0:
                total += 1
            if outcome.terminal:
                break
    return total / episodes


def summarize_algorithm(
    algorithm: str,
    traces: Iterable[EpisodeTrace],
    baseline: float,
    final_window: int = FINAL_WINDOW,
) -> AlgorithmSummary:
    traces = sorted(traces, key=lambda trace: trace.seed)
    final_means = {trace.seed: trace.final_mean(final_window) for trace in traces}
    per_seed_max = {trace.seed: trace.max_score for trace in traces}
    return AlgorithmSummary(
        algorithm=algorithm,
        seeds=[trace.seed for trace in traces],
        mean_final_score=sum(final_means.values()) / len(final_means),
        max_score=max(per_seed_max.values()),
        per_seed_max=per_seed_max,
        per_seed_final_mean=final_means,
        seeds_above_baseline=sum(1 for value in final_means.values() if value > baseline),
    )


def build_suite_result(
    traces: Sequence[EpisodeTrace],
    baseline: float,
    final_window: int = FINAL_WINDOW,
) -> SuiteResult:
    if not traces:
        raise ValueError("A suite result needs at least one trace")
    keys = [(trace.algorithm, trace.seed) for trace in traces]
    if len(set(keys)) != len(keys):
        raise ValueError("Each (algorithm, seed) pair must appear exactly once")

    by_algorithm: Dict[str, List[EpisodeTrace]] = {}
    for trace in traces:
        by_algorithm.setdefault(trace.algorithm, []).append(trace)
    summaries = [
        summarize_algorithm(algorithm, group, baseline, final_window)
        for algorithm, group in sorted(by_algorithm.items())
    ]
    ordered = sorted(traces, key=lambda trace: (trace.algorithm, trace.seed))
    return SuiteResult(traces=ordered, summaries=summaries, baseline=baseline, final_window=final_window)


def protocol_report(result: SuiteResult) -> List[str]:
    """Ranking checks for the three-way comparison; informational only."""
    dqn, drqn, dtqn = (result.summary_for(name) for name in ("dqn", "drqn", "dtqn"))
    if dqn is None or drqn is None or dtqn is None:
        return []
    best = drqn.mean_final_score > max(dqn.mean_final_score, dtqn.mean_final_score)
    reached = drqn.max_score >= PROTOCOL_MAX_SCORE
    lines = [
        f"drqn final-{result.final_window} mean exceeds dqn and dtqn: {'yes' if best else 'no'}",
        f"some drqn seed reached a max score >= {PROTOCOL_MAX_SCORE}: {'yes' if reached else 'no'} (max {drqn.max_score})",
    ]
    if not best:
        logger.warning("DRQN did not rank first on final mean score")
    return lines


def summarize(result: SuiteResult) -> str:
    if not result.traces:
        raise ValueError("Cannot summarize an empty suite")
    lines = [f"random baseline (mean score over {BASELINE_EPISODES} episodes): {result.baseline:.2f}"]
    for summary in result.summaries:
        seeds = len(summary.seeds)
        lines.append(
            f"{summary.algorithm}: final-{result.final_window} mean {summary.mean_final_score:.2f}"
            f" | max {summary.max_score}"
            f" | seeds above baseline {summary.seeds_above_baseline}/{seeds}"
        )
        per_seed = ", ".join(
            f"{seed}:{summary.per_seed_max[seed]}/{summary.per_seed_final_mean[seed]:.1f}" for seed in summary.seeds
        )
        lines.append(f"  per seed (max/final mean): {per_seed}")
    lines.extend(protocol_report(result))
    return "\n".join(lines) + "\n"
