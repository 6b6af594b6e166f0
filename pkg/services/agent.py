"""Q-learning with a replay buffer and a periodically synced target network."""
from __future__ import annotations

import logging
from typing import NamedTuple, Optional

import numpy as np

from models.schemas import ArchitectureConfig, EpsilonSchedule, TrainerConfig
from services import autodiff as ad
from services.autodiff import Tensor
from services.cartpole import Action, CartPoleEnv
from services.parameters import AdamState, ParameterSet, copy_parameters, optimizer_step
from services.qnets import advance_window, forward, initial_window, init_parameters, q_values
from services.replay import ReplayBuffer, Transition, TransitionBatch

logger = logging.getLogger(__name__)


class AgentError(ValueError):
    """Raised for malformed batches."""


class EpisodeOutcome(NamedTuple):
    score: int
    mean_loss: float
    epsilon: float
    steps: int


def select_action(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy choice; ties go to the lowest index.

    Exactly one uniform draw ``u`` is consumed per call: the agent explores iff
    ``u < epsilon`` and then picks Left iff ``u / epsilon < 0.5``.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise AgentError(f"epsilon must lie in [0, 1], got {epsilon}")
    u = rng.random()
    if u < epsilon:
        return Action.LEFT if u / epsilon < 0.5 else Action.RIGHT
    return Action(int(np.argmax(q)))


def td_targets(
    batch: TransitionBatch,
    target_params: ParameterSet,
    architecture: ArchitectureConfig,
    gamma: float,
) -> Tensor:
    """r if terminal else r + gamma * max_a Q_target(next_window, a); carries no gradient."""
    if len(batch) == 0:
        raise AgentError("Cannot compute targets for an empty batch")
    next_q = q_values(batch.next_windows, target_params, architecture)
    bootstrapped = batch.rewards + gamma * next_q.max(axis=1)
    return Tensor(np.where(batch.terminals, batch.rewards, bootstrapped))


def td_loss(
    batch: TransitionBatch,
    params: ParameterSet,
    target_params: ParameterSet,
    architecture: ArchitectureConfig,
    gamma: float,
) -> Tensor:
    targets = td_targets(batch, target_params, architecture, gamma)
    predicted = forward(batch.windows, params, architecture)
    chosen = predicted[np.arange(len(batch)), batch.actions]
    return ad.mse_loss(chosen, targets)


def train_step(
    batch: TransitionBatch,
    params: ParameterSet,
    target_params: ParameterSet,
    architecture: ArchitectureConfig,
    config: TrainerConfig,
    optimizer: AdamState,
) -> float:
    """One gradient step on the squared TD error; returns the loss before the update."""
    if len(batch) != config.batch_size:
        raise AgentError(f"Expected a batch of {config.batch_size} transitions, got {len(batch)}")
    params.zero_grad()
    loss = td_loss(batch, params, target_params, architecture, config.gamma)
    ad.backward(loss)
    optimizer_step(params, config.learning_rate, optimizer)
    return loss.item()


def maybe_sync_target(step: int, interval: int, params: ParameterSet, target_params: ParameterSet) -> bool:
    if interval < 1:
        raise AgentError(f"Sync interval must be at least 1, got {interval}")
    if step % interval != 0:
        return False
    copy_parameters(params, target_params)
    return True


class QLearner:
    """Owns the networks, optimizer state, replay buffer and global step of one run."""

    def __init__(
        self,
        architecture: ArchitectureConfig,
        config: TrainerConfig,
        *,
        init_rng: np.random.Generator,
        action_rng: np.random.Generator,
    ):
        if architecture.window_length != config.window_length:
            architecture = architecture.model_copy(update={"window_length": config.window_length})
        self.architecture = architecture
        self.config = config
        self.schedule: EpsilonSchedule = config.epsilon
        self.params = init_parameters(architecture, init_rng)
        self.target_params = self.params.frozen_copy()
        self.optimizer = AdamState()
        self.buffer = ReplayBuffer(config.buffer_capacity, config.window_length)
        self.rng = action_rng
        self.global_step = 0

    @property
    def epsilon(self) -> float:
        return self.schedule.value(self.global_step)

    def act(self, window: np.ndarray, epsilon: Optional[float] = None) -> Action:
        q = q_values(window, self.params, self.architecture)
        return select_action(q, self.epsilon if epsilon is None else epsilon, self.rng)

    def run_episode(self, env: CartPoleEnv) -> EpisodeOutcome:
        observation = env.reset()
        window = initial_window(observation, self.config.window_length)
        score = 0
        steps = 0
        losses: list[float] = []

        while True:
            action = self.act(window)
            observation, outcome = env.step(action)
            next_window = advance_window(window, observation)
            steps += 1
            if outcome.reward > 0:
                score += 1

            self.buffer.push(
                Transition(window, int(action), outcome.reward, next_window, outcome.fell)
            )
            if len(self.buffer) >= self.config.train_start_size:
                batch = self.buffer.sample(self.config.batch_size, self.rng)
                losses.append(
                    train_step(batch, self.params, self.target_params, self.architecture, self.config, self.optimizer)
                )

            self.global_step += 1
            if maybe_sync_target(self.global_step, self.config.target_sync_interval, self.params, self.target_params):
                logger.debug("Target network synced at step %d", self.global_step)

            window = next_window
            if outcome.terminal:
                break

        mean_loss = float(np.mean(losses)) if losses else 0.0
        return EpisodeOutcome(score=score, mean_loss=mean_loss, epsilon=self.epsilon, steps=steps)
