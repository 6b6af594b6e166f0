import numpy as np
import pytest

from services import autodiff as ad
from services.autodiff import Tensor, _node
from services.gradcheck import (
    NETWORK_TOLERANCE,
    PRIMITIVE_TOLERANCE,
    max_gradient_error,
    relative_error,
    run_gradcheck_suite,
)


def test_relative_error_uses_unit_floor():
    errors = relative_error(np.array([2.0, 1e-3, -4.0]), np.array([1.0, 0.0, -4.0]))

    np.testing.assert_allclose(errors, [0.5, 1e-3, 0.0])


def test_correct_backward_of_square_passes(rng):
    x = Tensor(rng.standard_normal(5), requires_grad=True)

    error = max_gradient_error(lambda: ad.sum_all(x * x), {"x": x})

    assert error < PRIMITIVE_TOLERANCE


def test_wrong_backward_is_detected(rng):
    x = Tensor(rng.standard_normal(4) + 3.0, requires_grad=True)

    def broken_square(t: Tensor) -> Tensor:
        return _node(t.data**2, (t,), lambda grad: (grad * t.data,))

    error = max_gradient_error(lambda: ad.sum_all(broken_square(x)), {"x": x})

    assert error > NETWORK_TOLERANCE


def test_relu_kinks_are_not_reported(rng):
    x = Tensor(np.array([0.0, 1.0, -1.0]), requires_grad=True)

    assert max_gradient_error(lambda: ad.sum_all(ad.relu(x)), {"x": x}) < PRIMITIVE_TOLERANCE


def test_full_suite_passes_on_a_few_draws():
    report = run_gradcheck_suite(draws=2, seed=11)
    names = {case.name for case in report.cases}

    assert report.passed, [case for case in report.cases if not case.passed]
    assert {"network:dqn", "network:drqn", "network:dtqn", "softmax_rows", "layer_norm", "matmul_stacked"} <= names
    assert all(case.draws == 2 for case in report.cases)


@pytest.mark.slow
def test_full_suite_passes_on_twenty_draws():
    assert run_gradcheck_suite(draws=20, seed=0).passed
