"""CartPole dynamics with a position/angle-only observation.

The equations of motion and constants follow the classic-control CartPole.
Rewards are +1 per surviving step and -1 on a fall.
"""
from __future__ import annotations

import math
from enum import IntEnum
from typing import NamedTuple, Optional

import numpy as np

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
POLE_HALF_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * POLE_HALF_LENGTH
FORCE_MAGNITUDE = 10.0
TAU = 0.02

THETA_THRESHOLD = 12 * 2 * math.pi / 360
X_THRESHOLD = 2.4
EPISODE_CAP = 500
INIT_BOUND = 0.05

# Display bounds: the observable range is twice the termination thresholds.
X_BOUND = 2 * X_THRESHOLD
THETA_BOUND = 2 * THETA_THRESHOLD


class CartPoleError(ValueError):
    """Raised when a state outside the physical input domain is stepped."""


class Action(IntEnum):
    LEFT = 0
    RIGHT = 1

    def mirror(self) -> "Action":
        return Action.RIGHT if self is Action.LEFT else Action.LEFT

    @property
    def force(self) -> float:
        return FORCE_MAGNITUDE if self is Action.RIGHT else -FORCE_MAGNITUDE


class FullState(NamedTuple):
    x: float
    x_dot: float
    theta: float
    theta_dot: float

    def mirror(self) -> "FullState":
        return FullState(-self.x, -self.x_dot, -self.theta, -self.theta_dot)

    def is_finite(self) -> bool:
        return all(math.isfinite(value) for value in self)


class PartialObservation(NamedTuple):
    x: float
    theta: float


class StepOutcome(NamedTuple):
    """Result of one step.

    ``terminal`` ends the episode; ``truncated`` marks an end caused only by
    the episode cap, which still earns +1.
    """

    next_state: FullState
    reward: float
    terminal: bool
    truncated: bool = False

    @property
    def fell(self) -> bool:
        return self.terminal and not self.truncated


def reset(rng: np.random.Generator) -> FullState:
    """Draw a start state; consumes exactly four uniform draws."""
    x, x_dot, theta, theta_dot = rng.uniform(-INIT_BOUND, INIT_BOUND, size=4)
    return FullState(float(x), float(x_dot), float(theta), float(theta_dot))


def integrate(state: FullState, action: Action) -> FullState:
    """One explicit Euler step of the cart-pole equations of motion."""
    x, x_dot, theta, theta_dot = state
    force = Action(action).force
    costheta = math.cos(theta)
    sintheta = math.sin(theta)

    temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sintheta) / TOTAL_MASS
    thetaacc = (GRAVITY * sintheta - costheta * temp) / (
        POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * costheta * costheta / TOTAL_MASS)
    )
    xacc = temp - POLE_MASS_LENGTH * thetaacc * costheta / TOTAL_MASS

    return FullState(
        x + TAU * x_dot,
        x_dot + TAU * xacc,
        theta + TAU * theta_dot,
        theta_dot + TAU * thetaacc,
    )


def has_fallen(state: FullState) -> bool:
    return abs(state.theta) > THETA_THRESHOLD or abs(state.x) > X_THRESHOLD


def step(
    state: FullState,
    action: Action,
    step_count: int = 0,
    episode_cap: int = EPISODE_CAP,
) -> StepOutcome:
    """Advance ``state`` by one time step.

    ``step_count`` is the number of steps already taken in the episode; the
    step that brings it to ``episode_cap`` is truncated.
    """
    if not state.is_finite():
        raise CartPoleError(f"Cannot step a non-finite state: {tuple(state)}")

    next_state = integrate(state, action)
    if has_fallen(next_state):
        return StepOutcome(next_state, -1.0, True, False)
    if step_count + 1 >= episode_cap:
        return StepOutcome(next_state, 1.0, True, True)
    return StepOutcome(next_state, 1.0, False, False)


def observe_partial(state: FullState) -> PartialObservation:
    return PartialObservation(state.x, state.theta)


class CartPoleEnv:
    """Stateful episode wrapper around the pure dynamics.

    The generator is owned by the caller and is only drawn from on reset.
    """

    def __init__(self, rng: np.random.Generator, episode_cap: int = EPISODE_CAP):
        if episode_cap < 1:
            raise ValueError(f"episode_cap must be positive, got {episode_cap}")
        self.rng = rng
        self.episode_cap = episode_cap
        self.state: Optional[FullState] = None
        self.steps = 0
        self.done = False

    def reset(self) -> PartialObservation:
        self.state = reset(self.rng)
        self.steps = 0
        self.done = False
        return observe_partial(self.state)

    def step(self, action: Action) -> tuple[PartialObservation, StepOutcome]:
        if self.state is None:
            raise CartPoleError("Environment must be reset before stepping")
        if self.done:
            raise CartPoleError(f"Episode ended after {self.steps} steps; reset before stepping again")
        outcome = step(self.state, action, self.steps, self.episode_cap)
        self.steps += 1
        self.state = outcome.next_state
        self.done = outcome.terminal
        return observe_partial(outcome.next_state), outcome
