import numpy as np
import pytest

from services.artifacts import write_atomic
from services.autodiff import Tensor
from services.parameters import (
    AdamState,
    CheckpointError,
    OptimizerError,
    ParameterError,
    ParameterSet,
    copy_parameters,
    decode_checkpoint,
    encode_checkpoint,
    optimizer_step,
)


def _params() -> ParameterSet:
    params = ParameterSet()
    params.add("layer.weight", np.array([[1.0, -2.0], [0.5, 4.0]]))
    params.add("layer.bias", np.array([0.25, -0.75]))
    return params


def test_duplicate_names_are_rejected():
    params = _params()

    with pytest.raises(ParameterError):
        params.add("layer.bias", np.zeros(2))


def test_names_keep_registration_order():
    params = _params()

    assert params.names() == ["layer.weight", "layer.bias"]
    assert len(params) == 2
    assert "layer.bias" in params


def test_first_adam_step_matches_hand_computation():
    params = _params()
    before = {name: tensor.data.copy() for name, tensor in params.items()}
    grads = {"layer.weight": np.array([[0.1, -0.2], [0.3, 0.0]]), "layer.bias": np.array([-1.0, 2.0])}
    for name, tensor in params.items():
        tensor.grad = grads[name].copy()
    lr = 0.01

    optimizer_step(params, lr, AdamState())

    for name, tensor in params.items():
        g = grads[name]
        m_hat = (0.1 * g) / (1 - 0.9)
        v_hat = (0.001 * g * g) / (1 - 0.999)
        expected = before[name] - lr * m_hat / (np.sqrt(v_hat) + 1e-8)
        np.testing.assert_allclose(tensor.data, expected, rtol=1e-12, atol=1e-15)


def test_adam_step_clears_gradients_and_counts_steps():
    params = _params()
    state = AdamState()
    for _ in range(2):
        for tensor in params.values():
            tensor.grad = np.ones_like(tensor.data)
        optimizer_step(params, 0.001, state)

    assert state.step == 2
    assert all(tensor.grad is None for tensor in params.values())


def test_adam_with_zero_gradients_leaves_values_unchanged():
    params = _params()
    before = {name: tensor.data.copy() for name, tensor in params.items()}
    state = AdamState()
    for _ in range(3):
        for tensor in params.values():
            tensor.grad = np.zeros_like(tensor.data)
        optimizer_step(params, 0.1, state)

    for name, tensor in params.items():
        np.testing.assert_array_equal(tensor.data, before[name])
    assert state.step == 3


def test_adam_step_requires_every_gradient():
    params = _params()
    params["layer.weight"].grad = np.ones((2, 2))

    with pytest.raises(OptimizerError, match="layer.bias"):
        optimizer_step(params, 0.001, AdamState())


def test_copy_parameters_copies_values_and_clears_gradients():
    source = _params()
    target = source.frozen_copy()
    source["layer.bias"].data = np.array([9.0, 9.0])
    target["layer.bias"].grad = np.ones(2)

    copy_parameters(source, target)

    np.testing.assert_array_equal(target["layer.bias"].data, [9.0, 9.0])
    assert target["layer.bias"].grad is None
    assert target["layer.bias"].data is not source["layer.bias"].data


def test_copy_parameters_between_empty_sets_is_a_no_op():
    source = ParameterSet()
    target = ParameterSet()

    copy_parameters(source, target)

    assert len(target) == 0
    assert target.names() == []


def test_copy_parameters_rejects_shape_mismatch():
    source = _params()
    target = ParameterSet({"layer.weight": Tensor(np.zeros((2, 2))), "layer.bias": Tensor(np.zeros(3))})

    with pytest.raises(ParameterError, match="layer.bias"):
        copy_parameters(source, target)


def test_copy_parameters_rejects_name_mismatch():
    with pytest.raises(ParameterError):
        copy_parameters(_params(), ParameterSet({"other": Tensor(np.zeros(2))}))


def test_frozen_copy_never_records_gradients():
    frozen = _params().frozen_copy()

    assert all(not tensor.requires_grad for tensor in frozen.values())


def test_checkpoint_preserves_names_shapes_and_bits(tmp_path):
    params = _params()
    path = tmp_path / "nested" / "params.pql"

    write_atomic(path, encode_checkpoint(params))
    restored = decode_checkpoint(path.read_bytes())

    assert restored.names() == params.names()
    for name, tensor in params.items():
        assert restored[name].shape == tensor.shape
        assert restored[name].data.tobytes() == tensor.data.tobytes()
    assert path.read_bytes()[:4] == b"PQL1"


def test_checkpoint_rejects_bad_magic():
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"NOPE" + encode_checkpoint(_params())[4:])


def test_checkpoint_rejects_truncation():
    with pytest.raises(CheckpointError):
        decode_checkpoint(encode_checkpoint(_params())[:-3])


def test_checkpoint_rejects_trailing_bytes():
    with pytest.raises(CheckpointError):
        decode_checkpoint(encode_checkpoint(_params()) + b"\x00")
