from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from pydantic import BaseModel, ValidationError

from commands import checks, history, plot, train
from config import configure_logging, get_settings
from models.schemas import (
    ArchitectureConfig,
    CliConfig,
    CliFileConfig,
    EpsilonSchedule,
    TrainerConfig,
)
from services.presets import get_architecture, list_algorithms

FULL_PROTOCOL = {"episodes": 5000, "seeds": list(range(10)), "algorithms": ["dqn", "drqn", "dtqn"]}

# flag dest -> field of the model it configures
TRAINER_FLAGS = {
    "episodes": "episodes",
    "window": "window_length",
    "gamma": "gamma",
    "sync_interval": "target_sync_interval",
    "batch_size": "batch_size",
    "buffer_capacity": "buffer_capacity",
    "train_start": "train_start_size",
    "lr": "learning_rate",
    "episode_cap": "episode_cap",
    "log_every": "log_every",
}
EPSILON_FLAGS = {"eps_start": "eps_start", "eps_end": "eps_end", "eps_decay": "decay_steps"}
ARCHITECTURE_FLAGS = {
    "hidden_dim": "hidden_dim",
    "gru_input_dim": "gru_input_dim",
    "gru_hidden_dim": "gru_hidden_dim",
    "model_dim": "model_dim",
    "heads": "n_heads",
    "layers": "n_layers",
    "ff_dim": "feedforward_dim",
    "positional_encoding": "positional_encoding",
    "readout": "readout",
}


class CliUsageError(ValueError):
    """Raised for invalid command-line input; the message names the flag."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise CliUsageError(message)


def _flag(dest: str) -> str:
    if dest == "positional_encoding":
        return "--no-positional-encoding"
    return "--" + dest.replace("_", "-")


def _default(model: type[BaseModel], field: str) -> Any:
    info = model.model_fields[field]
    return info.get_default(call_default_factory=True)


def _parse_seeds(value: str) -> List[int]:
    """``N`` means seeds 0..N-1; a comma-separated list is taken literally."""
    try:
        if "," in value:
            return [int(part) for part in value.split(",") if part.strip()]
        count = int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid seed list: {value!r}") from exc
    if count < 1:
        raise argparse.ArgumentTypeError(f"seed count must be positive, got {count}")
    return list(range(count))


def _parse_algorithms(value: str) -> List[str]:
    names = [part.strip().lower() for part in value.split(",") if part.strip()]
    unknown = [name for name in names if name not in list_algorithms()]
    if unknown:
        raise argparse.ArgumentTypeError(f"unsupported algorithm(s): {', '.join(unknown)}")
    return names


def _training_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    trainer = parent.add_argument_group("trainer")
    trainer.add_argument("--episodes", type=int, help=f"episodes per run (default: {_default(TrainerConfig, 'episodes')})")
    trainer.add_argument("--window", type=int, help=f"observation window length w (default: {_default(TrainerConfig, 'window_length')})")
    trainer.add_argument("--gamma", type=float, help=f"discount factor in [0, 1) (default: {_default(TrainerConfig, 'gamma')})")
    trainer.add_argument("--sync-interval", type=int, help=f"target sync interval C in steps (default: {_default(TrainerConfig, 'target_sync_interval')})")
    trainer.add_argument("--batch-size", type=int, help=f"minibatch size (default: {_default(TrainerConfig, 'batch_size')})")
    trainer.add_argument("--buffer-capacity", type=int, help=f"replay capacity (default: {_default(TrainerConfig, 'buffer_capacity')})")
    trainer.add_argument("--train-start", type=int, help=f"buffer size before training starts (default: {_default(TrainerConfig, 'train_start_size')})")
    trainer.add_argument("--lr", type=float, help=f"Adam learning rate (default: {_default(TrainerConfig, 'learning_rate')})")
    trainer.add_argument("--episode-cap", type=int, help=f"steps per episode cap (default: {_default(TrainerConfig, 'episode_cap')})")
    trainer.add_argument("--log-every", type=int, help=f"log every N episodes (default: {_default(TrainerConfig, 'log_every')})")
    trainer.add_argument("--eps-start", type=float, help=f"initial epsilon (default: {_default(EpsilonSchedule, 'eps_start')})")
    trainer.add_argument("--eps-end", type=float, help=f"final epsilon (default: {_default(EpsilonSchedule, 'eps_end')})")
    trainer.add_argument("--eps-decay", type=int, help=f"epsilon decay steps (default: {_default(EpsilonSchedule, 'decay_steps')})")

    network = parent.add_argument_group("architecture")
    network.add_argument("--hidden-dim", type=int, help=f"DQN hidden width (default: {_default(ArchitectureConfig, 'hidden_dim')})")
    network.add_argument("--gru-input-dim", type=int, help=f"DRQN observation projection width (default: {_default(ArchitectureConfig, 'gru_input_dim')})")
    network.add_argument("--gru-hidden-dim", type=int, help=f"DRQN hidden width (default: {_default(ArchitectureConfig, 'gru_hidden_dim')})")
    network.add_argument("--model-dim", type=int, help=f"DTQN model width (default: {_default(ArchitectureConfig, 'model_dim')})")
    network.add_argument("--heads", type=int, help=f"DTQN attention heads (default: {_default(ArchitectureConfig, 'n_heads')})")
    network.add_argument("--layers", type=int, help=f"DTQN encoder layers (default: {_default(ArchitectureConfig, 'n_layers')})")
    network.add_argument("--ff-dim", type=int, help=f"DTQN feed-forward width (default: {_default(ArchitectureConfig, 'feedforward_dim')})")
    network.add_argument("--no-positional-encoding", dest="positional_encoding", action="store_const", const=False, help="disable DTQN positional encoding (default: enabled)")
    network.add_argument("--readout", choices=["final", "mean"], help=f"DTQN sequence readout (default: {_default(ArchitectureConfig, 'readout')})")

    output = parent.add_argument_group("output")
    output.add_argument("--out", dest="out_dir", type=Path, help="output directory (default: $POLECART_OUT or runs)")
    output.add_argument("--config", dest="config_file", type=Path, help="JSON config file; flags override it (default: none)")
    output.add_argument("--moving-average", type=int, help="add a score moving-average column with this window (default: off)")
    output.add_argument("--database", dest="database_url", help="run registry URL (default: sqlite under the output directory)")
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", help="logging level (default: $POLECART_LOG_LEVEL or INFO)")

    parser = _Parser(
        prog="polecart",
        description="Q-learning workbench comparing DQN, DRQN and DTQN on position/angle-only CartPole.",
    )
    subparsers = parser.add_subparsers(dest="subcommand", parser_class=_Parser, metavar="{train,suite,plot,gradcheck,physcheck,history}")
    training = _training_options()

    train_parser = subparsers.add_parser("train", parents=[common, training], help="train one algorithm with one seed")
    train_parser.add_argument("--algo", dest="algorithms", type=_parse_algorithms, help="algorithm: dqn, drqn or dtqn (default: drqn)")
    train_parser.add_argument("--seed", type=int, help="master seed (default: 0)")

    suite_parser = subparsers.add_parser("suite", parents=[common, training], help="train algorithms x seeds")
    suite_parser.add_argument("--algos", dest="algorithms", type=_parse_algorithms, help="comma-separated algorithms (default: dqn,drqn,dtqn)")
    suite_parser.add_argument("--seeds", type=_parse_seeds, help="seed count N (seeds 0..N-1) or comma-separated list (default: 5)")
    suite_parser.add_argument("--jobs", type=int, help="worker processes (default: $POLECART_JOBS or 1)")
    suite_parser.add_argument("--full-protocol", action="store_true", help="5000 episodes x 10 seeds x all algorithms (default: off)")

    plot_parser = subparsers.add_parser("plot", parents=[common], help="render trace CSVs as one SVG")
    plot_parser.add_argument("--in", dest="inputs", type=Path, nargs="+", required=True, help="trace CSV files of one algorithm")
    plot_parser.add_argument("--out", dest="plot_path", type=Path, help="SVG path (default: scores.svg or losses.svg beside the first input)")
    plot_parser.add_argument("--metric", choices=["score", "mean_loss"], default="score", help="plotted column (default: score)")

    gradcheck_parser = subparsers.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    gradcheck_parser.add_argument("--draws", type=int, default=20, help="random draws per case (default: 20)")
    gradcheck_parser.add_argument("--seed", dest="check_seed", type=int, default=0, help="generator seed (default: 0)")

    physcheck_parser = subparsers.add_parser("physcheck", parents=[common], help="compare the integrator with a reference")
    physcheck_parser.add_argument("--pairs", type=int, default=1000, help="random (state, action) pairs (default: 1000)")
    physcheck_parser.add_argument("--seed", dest="check_seed", type=int, default=0, help="generator seed (default: 0)")

    history_parser = subparsers.add_parser("history", parents=[common], help="list runs recorded in the registry")
    history_parser.add_argument("--algo", dest="algorithms", type=_parse_algorithms, help="filter by algorithm (default: all)")
    history_parser.add_argument("--out", dest="out_dir", type=Path, help="output directory holding runs.db (default: $POLECART_OUT or runs)")
    history_parser.add_argument("--database", dest="database_url", help="run registry URL (default: sqlite under the output directory)")
    return parser


def _load_config_file(path: Path) -> CliFileConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CliUsageError(f"--config: cannot read {path}: {exc}") from exc
    try:
        return CliFileConfig(**raw)
    except ValidationError as exc:
        raise CliUsageError(f"--config: invalid file {path}: {exc}") from exc


def _validation_message(exc: ValidationError, flags: Dict[str, str]) -> str:
    problems = []
    for error in exc.errors():
        field = str(error["loc"][-1]) if error["loc"] else ""
        name = flags.get(field, field or "configuration")
        problems.append(f"{name}: {error['msg']}")
    return "; ".join(problems)


def _build_trainer(trainer_data: Dict[str, Any], epsilon_data: Dict[str, Any]) -> TrainerConfig:
    reverse = {field: _flag(dest) for dest, field in {**TRAINER_FLAGS, **EPSILON_FLAGS}.items()}
    try:
        epsilon = EpsilonSchedule(**epsilon_data)
    except ValidationError as exc:
        raise CliUsageError(_validation_message(exc, reverse)) from exc
    try:
        return TrainerConfig(**{**trainer_data, "epsilon": epsilon})
    except ValidationError as exc:
        raise CliUsageError(_validation_message(exc, reverse)) from exc


def _build_architectures(
    algorithms: Sequence[str],
    overrides: Dict[str, Dict[str, Any]],
    window_length: int,
) -> Dict[str, ArchitectureConfig]:
    reverse = {field: _flag(dest) for dest, field in ARCHITECTURE_FLAGS.items()}
    architectures = {}
    for algorithm in algorithms:
        try:
            architectures[algorithm] = get_architecture(
                algorithm, {**overrides.get(algorithm, {}), "window_length": window_length}
            )
        except ValidationError as exc:
            raise CliUsageError(f"{algorithm}: {_validation_message(exc, reverse)}") from exc
        except KeyError as exc:
            raise CliUsageError(str(exc)) from exc
    return architectures


def parse_and_validate(argv: Sequence[str]) -> CliConfig:
    """Resolve defaults < --full-protocol < --config file < flags into a CliConfig."""
    parser = build_parser()
    if not argv:
        raise CliUsageError("a subcommand is required")
    args = parser.parse_args(list(argv))
    if args.subcommand is None:
        raise CliUsageError("a subcommand is required")
    flags = {key: value for key, value in vars(args).items() if value is not None}
    settings = get_settings()

    resolved: Dict[str, Any] = {
        "subcommand": args.subcommand,
        "out_dir": settings.out_dir,
        "jobs": settings.jobs,
    }
    trainer_data: Dict[str, Any] = {}
    epsilon_data: Dict[str, Any] = {}
    architecture_overrides: Dict[str, Dict[str, Any]] = {}

    if args.subcommand == "train":
        resolved["algorithms"] = ["drqn"]
        resolved["seeds"] = [0]
    if flags.get("full_protocol"):
        resolved["algorithms"] = list(FULL_PROTOCOL["algorithms"])
        resolved["seeds"] = list(FULL_PROTOCOL["seeds"])
        trainer_data["episodes"] = FULL_PROTOCOL["episodes"]

    if "config_file" in flags:
        file_config = _load_config_file(flags["config_file"])
        resolved["config_file"] = flags["config_file"]
        for key in ("algorithms", "seeds", "jobs", "out_dir", "moving_average"):
            value = getattr(file_config, key)
            if value is not None:
                resolved[key] = value
        file_trainer = dict(file_config.trainer)
        epsilon_data.update(file_trainer.pop("epsilon", {}) or {})
        trainer_data.update(file_trainer)
        for algorithm, values in file_config.architectures.items():
            architecture_overrides.setdefault(algorithm, {}).update(values)

    for dest, field in TRAINER_FLAGS.items():
        if dest in flags:
            trainer_data[field] = flags[dest]
    for dest, field in EPSILON_FLAGS.items():
        if dest in flags:
            epsilon_data[field] = flags[dest]
    shared_overrides = {field: flags[dest] for dest, field in ARCHITECTURE_FLAGS.items() if dest in flags}

    for key in ("out_dir", "jobs", "moving_average", "inputs", "plot_path", "metric", "draws", "pairs", "check_seed", "database_url"):
        if key in flags:
            resolved[key] = flags[key]
    if "algorithms" in flags:
        resolved["algorithms"] = flags["algorithms"]
    if "seeds" in flags:
        resolved["seeds"] = flags["seeds"]
    if "seed" in flags:
        resolved["seeds"] = [flags["seed"]]
    if args.subcommand == "train" and len(resolved.get("algorithms", [])) != 1:
        raise CliUsageError("--algo: train takes exactly one algorithm")

    if args.subcommand in {"train", "suite"}:
        trainer = _build_trainer(trainer_data, epsilon_data)
        resolved["trainer"] = trainer
        algorithms = resolved.setdefault("algorithms", list(FULL_PROTOCOL["algorithms"]))
        for algorithm in algorithms:
            architecture_overrides.setdefault(algorithm, {}).update(shared_overrides)
        resolved["architectures"] = _build_architectures(algorithms, architecture_overrides, trainer.window_length)
    elif args.subcommand == "history":
        if len(flags.get("algorithms", [])) > 1:
            raise CliUsageError("--algo: history filters on one algorithm")
        resolved.setdefault("algorithms", [])

    level = flags.get("log_level")
    if level is not None and level.upper() not in getattr(logging, "getLevelNamesMapping", lambda: dict(logging._nameToLevel))():
        raise CliUsageError(f"--log-level: unknown level {level!r}")

    try:
        config = CliConfig(**resolved)
    except ValidationError as exc:
        raise CliUsageError(_validation_message(exc, {"jobs": "--jobs", "seeds": "--seeds", "algorithms": "--algos", "inputs": "--in"})) from exc

    configure_logging(level)
    return config


def _exit_code_for(exc: BaseException) -> int:
    """Map failures to process exit codes."""
    if isinstance(exc, CliUsageError):
        return 2
    return 1


def dispatch(config: CliConfig) -> int:
    handlers = {
        "train": train.run_train,
        "suite": train.run_suite_command,
        "plot": plot.run_plot,
        "gradcheck": checks.run_gradcheck,
        "physcheck": checks.run_physcheck,
        "history": history.run_history,
    }
    try:
        return handlers[config.subcommand](config)
    except Exception as exc:
        print(f"error: {config.subcommand}: {exc}", file=sys.stderr, flush=True)
        return _exit_code_for(exc)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        config = parse_and_validate(argv)
    except CliUsageError as exc:
        build_parser().print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr, flush=True)
        return _exit_code_for(exc)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    return dispatch(config)


if __name__ == "__main__":
    sys.exit(main())
