from __future__ import annotations

from typing import NamedTuple

import numpy as np

from services.qnets import OBSERVATION_DIM


class Transition(NamedTuple):
    window: np.ndarray
    action: int
    reward: float
    next_window: np.ndarray
    terminal: bool


class TransitionBatch(NamedTuple):
    windows: np.ndarray  # (B, w, 2)
    actions: np.ndarray  # (B,) int
    rewards: np.ndarray  # (B,)
    next_windows: np.ndarray  # (B, w, 2)
    terminals: np.ndarray  # (B,) bool

    def __len__(self) -> int:
        return int(self.actions.shape[0])


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, window_length: int):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.window_length = window_length
        shape = (capacity, window_length, OBSERVATION_DIM)
        self._windows = np.zeros(shape)
        self._next_windows = np.zeros(shape)
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity)
        self._terminals = np.zeros(capacity, dtype=bool)
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, transition: Transition) -> None:
        slot = self._cursor
        self._windows[slot] = transition.window
        self._next_windows[slot] = transition.next_window
        self._actions[slot] = int(transition.action)
        self._rewards[slot] = transition.reward
        self._terminals[slot] = transition.terminal
        self._cursor = (slot + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def __getitem__(self, index: int) -> Transition:
        """Entry ``index`` counted from the oldest stored transition."""
        if not 0 <= index < self._size:
            raise IndexError(f"Replay index {index} out of range for size {self._size}")
        slot = (self._cursor - self._size + index) % self.capacity
        return Transition(
            self._windows[slot].copy(),
            int(self._actions[slot]),
            float(self._rewards[slot]),
            self._next_windows[slot].copy(),
            bool(self._terminals[slot]),
        )

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if self._size == 0:
            raise ValueError("Cannot sample from an empty replay buffer")
        return rng.integers(0, self._size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """Uniform sample with replacement."""
        indices = self.sample_indices(batch_size, rng)
        slots = (self._cursor - self._size + indices) % self.capacity
        return TransitionBatch(
            windows=self._windows[slots],
            actions=self._actions[slots],
            rewards=self._rewards[slots],
            next_windows=self._next_windows[slots],
            terminals=self._terminals[slots],
        )
