"""Cross-check of the CartPole integrator against an independent formulation.

The reference writes the dynamics as the 2x2 linear system

    M * x_acc       + m*l*cos(theta) * theta_acc = F + m*l*theta_dot^2*sin(theta)
    cos(theta) * x_acc + (4/3)*l * theta_acc    = g*sin(theta)

and solves it with Cramer's rule before taking the same Euler step.
"""
from __future__ import annotations

import logging
import math

import numpy as np

from models.schemas import PhysicsCheckReport
from services import cartpole
from services.cartpole import Action, FullState

logger = logging.getLogger(__name__)

ORACLE_TOLERANCE = 1e-12


def reference_step(state: FullState, action: Action) -> FullState:
    x, x_dot, theta, theta_dot = state
    force = cartpole.FORCE_MAGNITUDE if action == Action.RIGHT else -cartpole.FORCE_MAGNITUDE
    m = cartpole.POLE_MASS
    total = cartpole.CART_MASS + m
    l = cartpole.POLE_HALF_LENGTH
    s, c = math.sin(theta), math.cos(theta)

    a11, a12 = total, m * l * c
    a21, a22 = c, 4.0 / 3.0 * l
    b1 = force + m * l * theta_dot**2 * s
    b2 = cartpole.GRAVITY * s
    det = a11 * a22 - a12 * a21
    x_acc = (b1 * a22 - a12 * b2) / det
    theta_acc = (a11 * b2 - a21 * b1) / det

    dt = cartpole.TAU
    return FullState(x + dt * x_dot, x_dot + dt * x_acc, theta + dt * theta_dot, theta_dot + dt * theta_acc)


def random_state(rng: np.random.Generator) -> FullState:
    return FullState(
        float(rng.uniform(-cartpole.X_THRESHOLD, cartpole.X_THRESHOLD)),
        float(rng.uniform(-3.0, 3.0)),
        float(rng.uniform(-cartpole.THETA_THRESHOLD, cartpole.THETA_THRESHOLD)),
        float(rng.uniform(-3.0, 3.0)),
    )


def run_physics_check(pairs: int = 1000, seed: int = 0) -> PhysicsCheckReport:
    rng = np.random.default_rng(seed)
    max_error = 0.0
    mirror_violations = 0
    for _ in range(pairs):
        state = random_state(rng)
        action = Action(int(rng.integers(0, 2)))
        produced = cartpole.integrate(state, action)
        expected = reference_step(state, action)
        max_error = max(max_error, max(abs(p - e) for p, e in zip(produced, expected)))
        if cartpole.integrate(state.mirror(), action.mirror()) != produced.mirror():
            mirror_violations += 1

    report = PhysicsCheckReport(
        pairs=pairs, max_abs_error=max_error, tolerance=ORACLE_TOLERANCE, mirror_violations=mirror_violations
    )
    logger.info(
        "Physics check over %d pairs: max error %.3e, %d mirror violations",
        pairs,
        max_error,
        mirror_violations,
    )
    return report
