import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from models.schemas import ArchitectureConfig, EpsilonSchedule, TrainerConfig
from services.agent import (
    AgentError,
    QLearner,
    maybe_sync_target,
    select_action,
    td_targets,
    train_step,
)
from services.cartpole import Action, CartPoleEnv
from services.parameters import AdamState
from services.qnets import init_parameters, q_values
from services.replay import TransitionBatch

DQN = ArchitectureConfig(variant="dqn", window_length=4, hidden_dim=8)


class FixedDraw:
    """Generator stand-in that always returns the same uniform draw."""

    def __init__(self, value: float):
        self.value = value
        self.calls = 0

    def random(self) -> float:
        self.calls += 1
        return self.value


def _constant_target(max_q: float):
    params = init_parameters(DQN, np.random.default_rng(0)).frozen_copy()
    for tensor in params.values():
        tensor.data = np.zeros_like(tensor.data)
    params["head.bias"].data = np.array([max_q, max_q - 1.0])
    return params


def _batch(rewards, terminals, size=None) -> TransitionBatch:
    count = len(rewards)
    return TransitionBatch(
        windows=np.zeros((count, 4, 2)),
        actions=np.zeros(count, dtype=np.int64),
        rewards=np.asarray(rewards, dtype=np.float64),
        next_windows=np.zeros((count, 4, 2)),
        terminals=np.asarray(terminals, dtype=bool),
    )


def test_greedy_action_breaks_ties_to_left():
    assert select_action(np.array([1.0, 1.0]), 0.0, np.random.default_rng(0)) == Action.LEFT
    assert select_action(np.array([0.0, 1.0]), 0.0, np.random.default_rng(0)) == Action.RIGHT


@pytest.mark.parametrize(
    "draw, epsilon, expected",
    [
        (0.2, 0.5, Action.LEFT),
        (0.3, 0.5, Action.RIGHT),
        (0.7, 0.5, Action.LEFT),
        (0.99, 1.0, Action.RIGHT),
    ],
)
def test_exploration_uses_one_draw(draw, epsilon, expected):
    rng = FixedDraw(draw)

    assert select_action(np.array([2.0, 1.0]), epsilon, rng) == expected
    assert rng.calls == 1


def test_select_action_consumes_exactly_one_uniform():
    used = np.random.default_rng(8)
    reference = np.random.default_rng(8)

    select_action(np.array([0.0, 1.0]), 0.3, used)
    reference.random()

    assert used.random() == reference.random()


def test_invalid_epsilon_is_rejected():
    with pytest.raises(AgentError):
        select_action(np.zeros(2), 1.5, np.random.default_rng(0))


def test_td_target_hand_cases():
    target = _constant_target(2.0)

    bootstrapped = td_targets(_batch([1.0], [False]), target, DQN, gamma=0.9).numpy()
    terminal = td_targets(_batch([-1.0], [True]), target, DQN, gamma=0.9).numpy()
    myopic = td_targets(_batch([1.0], [False]), target, DQN, gamma=0.0).numpy()

    assert bootstrapped[0] == pytest.approx(2.8)
    assert terminal[0] == -1.0
    assert myopic[0] == 1.0


def test_td_targets_reject_empty_batch():
    with pytest.raises(AgentError):
        td_targets(_batch([], []), _constant_target(1.0), DQN, gamma=0.9)


def test_train_step_rejects_wrong_batch_size():
    config = TrainerConfig(batch_size=4, train_start_size=4, buffer_capacity=16)
    params = init_parameters(DQN, np.random.default_rng(1))

    with pytest.raises(AgentError):
        train_step(_batch([1.0, 1.0], [False, False]), params, params.frozen_copy(), DQN, config, AdamState())


def test_repeated_steps_reduce_loss_on_a_fixed_batch(rng):
    config = TrainerConfig(batch_size=8, train_start_size=8, buffer_capacity=16, learning_rate=1e-2, gamma=0.5)
    params = init_parameters(DQN, rng)
    target = params.frozen_copy()
    batch = TransitionBatch(
        windows=rng.uniform(-0.1, 0.1, size=(8, 4, 2)),
        actions=rng.integers(0, 2, size=8),
        rewards=np.ones(8),
        next_windows=rng.uniform(-0.1, 0.1, size=(8, 4, 2)),
        terminals=np.zeros(8, dtype=bool),
    )
    optimizer = AdamState()

    losses = [train_step(batch, params, target, DQN, config, optimizer) for _ in range(60)]

    assert losses[-1] < 0.5 * losses[0]
    assert optimizer.step == 60


def test_train_step_leaves_target_network_without_gradients(rng):
    config = TrainerConfig(batch_size=4, train_start_size=4, buffer_capacity=16)
    params = init_parameters(DQN, rng)
    target = params.frozen_copy()
    before = {name: tensor.data.copy() for name, tensor in target.items()}
    batch = TransitionBatch(
        windows=rng.uniform(-0.1, 0.1, size=(4, 4, 2)),
        actions=np.array([1, 0, 1, 0]),
        rewards=np.array([1.0, 1.0, -1.0, 1.0]),
        next_windows=rng.uniform(-0.1, 0.1, size=(4, 4, 2)),
        terminals=np.array([False, False, True, False]),
    )

    train_step(batch, params, target, DQN, config, AdamState())

    for name, tensor in target.items():
        assert tensor.grad is None
        assert not tensor.requires_grad
        np.testing.assert_array_equal(tensor.data, before[name])


def test_target_is_constant_between_syncs_and_equal_after(rng):
    config = TrainerConfig(batch_size=4, train_start_size=4, buffer_capacity=16, target_sync_interval=3)
    params = init_parameters(DQN, rng)
    target = params.frozen_copy()
    sample_windows = rng.uniform(-0.1, 0.1, size=(5, 4, 2))
    frozen = q_values(sample_windows, target, DQN).tobytes()
    batch = TransitionBatch(
        windows=rng.uniform(-0.1, 0.1, size=(4, 4, 2)),
        actions=np.array([0, 1, 0, 1]),
        rewards=np.ones(4),
        next_windows=rng.uniform(-0.1, 0.1, size=(4, 4, 2)),
        terminals=np.zeros(4, dtype=bool),
    )
    optimizer = AdamState()

    for step in (1, 2):
        train_step(batch, params, target, DQN, config, optimizer)
        assert not maybe_sync_target(step, config.target_sync_interval, params, target)
        assert q_values(sample_windows, target, DQN).tobytes() == frozen

    train_step(batch, params, target, DQN, config, optimizer)
    assert maybe_sync_target(3, config.target_sync_interval, params, target)
    assert q_values(sample_windows, target, DQN).tobytes() == q_values(sample_windows, params, DQN).tobytes()
    assert q_values(sample_windows, target, DQN).tobytes() != frozen


@given(st.integers(min_value=0, max_value=20_000), st.integers(min_value=0, max_value=20_000))
def test_epsilon_schedule_is_monotone(first, second):
    schedule = EpsilonSchedule(eps_start=1.0, eps_end=0.05, decay_steps=10_000)
    low, high = sorted((first, second))

    assert schedule.value(low) >= schedule.value(high)
    assert 0.05 <= schedule.value(high) <= 1.0


def test_learner_episode_fills_buffer_and_counts_score(tiny_trainer):
    learner = QLearner(
        DQN,
        tiny_trainer,
        init_rng=np.random.default_rng(0),
        action_rng=np.random.default_rng(2000),
    )
    env = CartPoleEnv(np.random.default_rng(1000), episode_cap=tiny_trainer.episode_cap)

    outcome = learner.run_episode(env)

    assert len(learner.buffer) == min(outcome.steps, tiny_trainer.buffer_capacity)
    assert learner.global_step == outcome.steps
    last = learner.buffer[len(learner.buffer) - 1]
    if last.terminal:
        assert outcome.score == outcome.steps - 1
        assert last.reward == -1.0
    else:
        assert outcome.steps == tiny_trainer.episode_cap
        assert outcome.score == outcome.steps
    assert outcome.epsilon == learner.epsilon


def test_learner_trains_once_buffer_reaches_train_start(tiny_trainer):
    learner = QLearner(
        DQN,
        tiny_trainer,
        init_rng=np.random.default_rng(0),
        action_rng=np.random.default_rng(2000),
    )
    env = CartPoleEnv(np.random.default_rng(1000), episode_cap=tiny_trainer.episode_cap)

    outcomes = [learner.run_episode(env) for _ in range(3)]

    assert sum(outcome.steps for outcome in outcomes) >= tiny_trainer.train_start_size
    assert learner.optimizer.step > 0
    assert any(outcome.mean_loss > 0 for outcome in outcomes)
