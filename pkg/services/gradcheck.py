"""Central finite-difference checks of the analytic gradients."""
from __future__ import annotations

import logging
from typing import Callable, Dict, Mapping, Tuple

import numpy as np

from models.schemas import ArchitectureConfig, GradCheckCase, GradCheckReport
from services import autodiff as ad
from services.autodiff import Tensor
from services.qnets import forward, init_parameters

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
PRIMITIVE_TOLERANCE = 1e-6
NETWORK_TOLERANCE = 1e-4
KINK_TOLERANCE = 1e-2

LossBuilder = Callable[[], Tensor]
Case = Tuple[LossBuilder, Dict[str, Tensor]]

SMALL_ARCHITECTURES = (
    ArchitectureConfig(variant="dqn", window_length=4, hidden_dim=6),
    ArchitectureConfig(variant="drqn", window_length=4, gru_input_dim=3, gru_hidden_dim=4),
    ArchitectureConfig(
        variant="dtqn", window_length=4, model_dim=4, n_heads=2, n_layers=1, feedforward_dim=8
    ),
)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - f| / max(1, |a|, |f|), elementwise."""
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return np.abs(analytic - numeric) / scale


def _central_differences(build_loss: LossBuilder, tensor: Tensor, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient plus a mask of elements where the one-sided
    slopes disagree, i.e. a ReLU kink lies within ``h``."""
    grad = np.zeros_like(tensor.data)
    kinks = np.zeros(tensor.shape, dtype=bool)
    with ad.no_grad():
        base = build_loss().item()
        for index in np.ndindex(tensor.shape):
            original = tensor.data[index]
            tensor.data[index] = original + h
            plus = build_loss().item()
            tensor.data[index] = original - h
            minus = build_loss().item()
            tensor.data[index] = original
            grad[index] = (plus - minus) / (2.0 * h)
            forward_slope = (plus - base) / h
            backward_slope = (base - minus) / h
            kinks[index] = abs(forward_slope - backward_slope) > KINK_TOLERANCE * max(1.0, abs(grad[index]))
    return grad, kinks


def max_gradient_error(build_loss: LossBuilder, tensors: Mapping[str, Tensor], h: float = FD_STEP) -> float:
    """Largest relative error between backward() and central differences,
    ignoring elements that straddle a non-differentiable point."""
    for tensor in tensors.values():
        tensor.grad = None
    ad.backward(build_loss())
    worst = 0.0
    for name, tensor in tensors.items():
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        numeric, kinks = _central_differences(build_loss, tensor, h)
        if kinks.any():
            logger.debug("Skipping %d kinked elements of %s", int(kinks.sum()), name)
        error = float(relative_error(analytic, numeric)[~kinks].max(initial=0.0))
        if error > worst:
            worst = error
            logger.debug("New worst gradient error %.3e at %s", error, name)
    return worst


def _leaf(rng: np.random.Generator, *shape: int, away_from_zero: bool = False) -> Tensor:
    data = rng.standard_normal(shape)
    if away_from_zero:
        data = np.sign(data) * (0.1 + np.abs(data))
    return Tensor(data, requires_grad=True)


def primitive_cases(rng: np.random.Generator) -> Dict[str, Case]:
    cases: Dict[str, Case] = {}

    def unary(name: str, op: Callable[[Tensor], Tensor], **kwargs) -> None:
        x = _leaf(rng, 3, 4, **kwargs)
        weights = Tensor(rng.standard_normal((3, 4)))
        cases[name] = (lambda: ad.sum_all(ad.mul(op(x), weights)), {"x": x})

    def binary(name: str, op: Callable[[Tensor, Tensor], Tensor], b_shape: Tuple[int, ...]) -> None:
        a = _leaf(rng, 3, 4)
        b = _leaf(rng, *b_shape)
        weights = Tensor(rng.standard_normal((3, 4)))
        cases[name] = (lambda: ad.sum_all(ad.mul(op(a, b), weights)), {"a": a, "b": b})

    binary("add", ad.add, (3, 4))
    binary("add_row_vector", ad.add, (4,))
    binary("sub", ad.sub, (3, 4))
    binary("mul", ad.mul, (3, 4))
    unary("scale", lambda x: ad.scale(x, -2.5))
    unary("tanh", ad.tanh)
    unary("sigmoid", ad.sigmoid)
    unary("relu", ad.relu, away_from_zero=True)
    unary("softmax_rows", ad.softmax_rows)

    a = _leaf(rng, 4, 5)
    b = _leaf(rng, 5, 3)
    weights = Tensor(rng.standard_normal((4, 3)))
    cases["matmul"] = (lambda: ad.sum_all(ad.mul(ad.matmul(a, b), weights)), {"a": a, "b": b})

    stacked = _leaf(rng, 2, 3, 4)
    shared = _leaf(rng, 4, 2)
    weights3 = Tensor(rng.standard_normal((2, 3, 2)))
    cases["matmul_stacked"] = (
        lambda: ad.sum_all(ad.mul(ad.matmul(stacked, shared), weights3)),
        {"a": stacked, "b": shared},
    )

    x = _leaf(rng, 3, 4)
    gain = _leaf(rng, 4)
    bias = _leaf(rng, 4)
    weights_ln = Tensor(rng.standard_normal((3, 4)))
    cases["layer_norm"] = (
        lambda: ad.sum_all(ad.mul(ad.layer_norm(x, gain, bias), weights_ln)),
        {"x": x, "gain": gain, "bias": bias},
    )

    pred = _leaf(rng, 5)
    target = Tensor(rng.standard_normal(5))
    cases["mse_loss"] = (lambda: ad.mse_loss(pred, target), {"pred": pred})
    return cases


def network_case(config: ArchitectureConfig, rng: np.random.Generator, batch: int = 3) -> Case:
    params = init_parameters(config, rng)
    # Perturb zero-initialised biases and unit gains so every path is exercised.
    for tensor in params.values():
        tensor.data = tensor.data + 0.1 * rng.standard_normal(tensor.shape)
    windows = rng.uniform(-0.5, 0.5, size=(batch, config.window_length, 2))
    weights = Tensor(rng.standard_normal((batch, 2)))
    return (
        lambda: ad.sum_all(ad.mul(forward(windows, params, config), weights)),
        dict(params.items()),
    )


def run_gradcheck_suite(draws: int = 20, seed: int = 0) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    worst: Dict[str, float] = {}
    tolerances: Dict[str, float] = {}

    for _ in range(draws):
        for name, (build_loss, tensors) in primitive_cases(rng).items():
            worst[name] = max(worst.get(name, 0.0), max_gradient_error(build_loss, tensors))
            tolerances[name] = PRIMITIVE_TOLERANCE
        for config in SMALL_ARCHITECTURES:
            name = f"network:{config.variant}"
            build_loss, tensors = network_case(config, rng)
            worst[name] = max(worst.get(name, 0.0), max_gradient_error(build_loss, tensors))
            tolerances[name] = NETWORK_TOLERANCE

    cases = [
        GradCheckCase(name=name, draws=draws, max_relative_error=worst[name], tolerance=tolerances[name])
        for name in worst
    ]
    report = GradCheckReport(cases=cases)
    logger.info("Gradient check over %d draws: %s", draws, "passed" if report.passed else "FAILED")
    return report
