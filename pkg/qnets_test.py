import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from pydantic import ValidationError

from models.schemas import ArchitectureConfig
from services import autodiff as ad
from services.autodiff import Tensor
from services.parameters import ParameterSet
from services.presets import get_architecture
from services.qnets import (
    QNetworkError,
    advance_window,
    count_parameters,
    drqn_final_hidden,
    forward,
    forward_dtqn,
    gru_cell,
    init_parameters,
    initial_window,
    multi_head_self_attention,
    parameter_layout,
    project_observations,
    q_values,
    sinusoidal_positional_encoding,
)

SMALL = {
    "dqn": ArchitectureConfig(variant="dqn", window_length=4, hidden_dim=8),
    "drqn": ArchitectureConfig(variant="drqn", window_length=4, gru_input_dim=4, gru_hidden_dim=6),
    "dtqn": ArchitectureConfig(variant="dtqn", window_length=4, model_dim=8, n_heads=2, n_layers=2, feedforward_dim=8),
}

observations = st.tuples(
    st.floats(min_value=-4.8, max_value=4.8), st.floats(min_value=-0.42, max_value=0.42)
)


@pytest.mark.parametrize("variant", ["dqn", "drqn", "dtqn"])
def test_single_and_batched_output_shapes(variant, rng):
    config = SMALL[variant]
    params = init_parameters(config, rng)
    windows = rng.uniform(-0.1, 0.1, size=(5, 4, 2))

    assert forward(windows[0], params, config).shape == (2,)
    assert forward(windows, params, config).shape == (5, 2)


@pytest.mark.parametrize("variant", ["dqn", "drqn", "dtqn"])
def test_batch_rows_match_single_windows(variant, rng):
    config = SMALL[variant]
    params = init_parameters(config, rng)
    windows = rng.uniform(-0.1, 0.1, size=(3, 4, 2))

    batched = q_values(windows, params, config)

    for index in range(3):
        np.testing.assert_allclose(batched[index], q_values(windows[index], params, config), atol=1e-12)


@pytest.mark.parametrize("variant", ["dqn", "drqn", "dtqn"])
def test_wrong_window_length_is_rejected(variant, rng):
    config = SMALL[variant]
    params = init_parameters(config, rng)

    with pytest.raises(QNetworkError):
        forward(np.zeros((3, 2)), params, config)


def test_dtqn_requires_divisible_heads():
    with pytest.raises(ValidationError):
        ArchitectureConfig(variant="dtqn", model_dim=6, n_heads=4)


def test_initialisation_bounds_and_draw_order():
    config = SMALL["dqn"]
    params = init_parameters(config, np.random.default_rng(9))
    replay = np.random.default_rng(9)

    for name, shape, kind in parameter_layout(config):
        tensor = params[name]
        if kind == "weight":
            bound = math.sqrt(1.0 / shape[0])
            np.testing.assert_array_equal(tensor.data, replay.uniform(-bound, bound, size=shape))
        else:
            np.testing.assert_array_equal(tensor.data, np.zeros(shape))


def test_layer_norm_gains_start_at_one(rng):
    params = init_parameters(SMALL["dtqn"], rng)

    np.testing.assert_array_equal(params["encoder0.norm1.gain"].data, np.ones(8))
    np.testing.assert_array_equal(params["encoder1.norm2.bias"].data, np.zeros(8))


def test_same_seed_same_parameters():
    first = init_parameters(SMALL["drqn"], np.random.default_rng(4))
    second = init_parameters(SMALL["drqn"], np.random.default_rng(4))

    for name in first:
        assert first[name].data.tobytes() == second[name].data.tobytes()


def test_gru_keeps_hidden_state_when_update_gate_closed(rng):
    config = SMALL["drqn"]
    params = init_parameters(config, rng)
    params["gru.w_z"].data[:] = 0.0
    params["gru.u_z"].data[:] = 0.0
    params["gru.b_z"].data[:] = -50.0
    h = Tensor(rng.standard_normal((2, 6)))

    out = gru_cell(Tensor(rng.standard_normal((2, 4))), h, params)

    np.testing.assert_allclose(out.numpy(), h.data, atol=1e-12)


def test_drqn_unroll_of_one_step_is_one_cell(rng):
    config = SMALL["drqn"]
    params = init_parameters(config, rng)
    window = rng.uniform(-0.1, 0.1, size=(1, 1, 2))

    unrolled = drqn_final_hidden(window, params, config)
    manual = gru_cell(project_observations(window, params)[:, 0, :], Tensor(np.zeros((1, 6))), params)

    np.testing.assert_allclose(unrolled.numpy(), manual.numpy())


def test_drqn_incremental_steps_match_the_full_unroll(rng):
    config = SMALL["drqn"]
    params = init_parameters(config, rng)
    windows = rng.uniform(-0.2, 0.2, size=(3, 4, 2))
    projected = project_observations(windows, params)

    h = Tensor(np.zeros((3, 6)))
    for t in range(4):
        h = gru_cell(projected[:, t, :], h, params)
        np.testing.assert_allclose(h.numpy(), drqn_final_hidden(windows[:, : t + 1], params, config).numpy(), atol=1e-12)

    prefix = drqn_final_hidden(windows[:, :3], params, config)
    resumed = drqn_final_hidden(windows[:, 3:], params, config, initial=prefix)
    np.testing.assert_allclose(resumed.numpy(), h.numpy(), atol=1e-12)


def test_positional_encoding_values():
    encoding = sinusoidal_positional_encoding(4, 6)

    np.testing.assert_allclose(encoding[0], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    assert encoding[1, 0] == pytest.approx(math.sin(1.0))
    assert np.all(np.abs(encoding) <= 1.0)


def test_attention_weights_are_row_distributions(rng):
    config = SMALL["dtqn"]
    params = init_parameters(config, rng)
    weights = []

    forward_dtqn(rng.uniform(-0.1, 0.1, size=(3, 4, 2)), params, config, weights_out=weights)

    assert len(weights) == config.n_heads * config.n_layers
    for attention in weights:
        assert attention.shape == (3, 4, 4)
        np.testing.assert_allclose(attention.sum(axis=-1), np.ones((3, 4)), atol=1e-12)


def test_dtqn_readout_and_positional_variants_differ(rng):
    base = SMALL["dtqn"]
    params = init_parameters(base, rng)
    windows = rng.uniform(-0.1, 0.1, size=(2, 4, 2))

    final = q_values(windows, params, base)
    pooled = q_values(windows, params, base.model_copy(update={"readout": "mean"}))
    unpositioned = q_values(windows, params, base.model_copy(update={"positional_encoding": False}))

    assert not np.allclose(final, pooled)
    assert not np.allclose(final, unpositioned)


def test_q_values_build_no_graph(rng):
    config = SMALL["dqn"]
    params = init_parameters(config, rng)

    q = q_values(np.zeros((4, 2)), params, config)

    assert isinstance(q, np.ndarray)
    assert all(tensor.grad is None for tensor in params.values())
    assert ad.is_grad_enabled()


def test_parameter_counts_follow_layout():
    counts = count_parameters(SMALL.values())

    assert counts["dqn"] == (8 * 8 + 8) + (8 * 8 + 8) + (8 * 2 + 2)
    assert counts["drqn"] == (2 * 4 + 4) + 3 * (4 * 6 + 6 * 6 + 6) + (6 * 2 + 2)


def test_presets_apply_overrides():
    config = get_architecture("dtqn", {"model_dim": 16, "window_length": 8})

    assert config.model_dim == 16
    assert config.window_length == 8
    assert config.n_heads == 2
    with pytest.raises(KeyError, match="Unsupported algorithm"):
        get_architecture("a3c")


@given(observations, st.lists(observations, min_size=1, max_size=10))
def test_window_evolution(first, later):
    window = initial_window(first, 4)
    assert np.all(window == np.asarray(first))

    history = [first] * 4
    for observation in later:
        window = advance_window(window, observation)
        history.append(observation)
        assert window.shape == (4, 2)
        np.testing.assert_array_equal(window, np.asarray(history[-4:]))


def test_dqn_hand_sized_network():
    config = ArchitectureConfig(variant="dqn", window_length=1, hidden_dim=1)
    params = init_parameters(config, np.random.default_rng(0))
    params["fc1.weight"].data = np.array([[1.0], [2.0]])
    params["fc1.bias"].data = np.array([0.5])
    params["fc2.weight"].data = np.array([[2.0]])
    params["fc2.bias"].data = np.array([-0.2])
    params["head.weight"].data = np.array([[1.0, -3.0]])
    params["head.bias"].data = np.array([0.5, 0.0])

    # 0.3 - 0.2 + 0.5 = 0.6 -> 2 * 0.6 - 0.2 = 1.0 -> (1.5, -3.0)
    np.testing.assert_allclose(q_values(np.array([[0.3, -0.1]]), params, config), [1.5, -3.0])
    # both hidden units clip to zero, leaving the head bias
    np.testing.assert_allclose(q_values(np.array([[-1.0, 0.0]]), params, config), [0.5, 0.0])


def test_two_position_single_head_attention_by_hand():
    identity = np.eye(2)
    params = ParameterSet(
        {
            "attn.w_q": Tensor(identity.copy()),
            "attn.w_k": Tensor(identity.copy()),
            "attn.w_v": Tensor(identity.copy()),
            "attn.w_o": Tensor(identity.copy()),
            "attn.b_o": Tensor(np.zeros(2)),
        }
    )
    weights = []

    out = multi_head_self_attention(Tensor(np.eye(2)), params, "attn", n_heads=1, weights_out=weights)

    # scores = I / sqrt(2); each row puts sigmoid(1/sqrt(2)) on itself
    own = 1.0 / (1.0 + math.exp(-1.0 / math.sqrt(2.0)))
    expected = np.array([[own, 1.0 - own], [1.0 - own, own]])
    np.testing.assert_allclose(weights[0], expected, atol=1e-12)
    np.testing.assert_allclose(out.numpy(), expected, atol=1e-12)


def test_identical_observations_get_uniform_attention(rng):
    config = SMALL["dtqn"].model_copy(update={"positional_encoding": False})
    params = init_parameters(config, rng)
    window = np.tile([[0.3, -0.1]], (4, 1))
    weights = []

    forward_dtqn(window, params, config, weights_out=weights)

    assert len(weights) == config.n_heads * config.n_layers
    for attention in weights:
        np.testing.assert_allclose(attention, np.full((1, 4, 4), 0.25), atol=1e-12)


def test_dtqn_without_positions_and_mean_readout_ignores_order(rng):
    config = SMALL["dtqn"].model_copy(update={"positional_encoding": False, "readout": "mean"})
    params = init_parameters(config, rng)
    windows = rng.uniform(-1.0, 1.0, size=(3, 4, 2))
    order = [2, 0, 3, 1]

    np.testing.assert_allclose(
        q_values(windows[:, order], params, config), q_values(windows, params, config), atol=1e-12
    )


def test_dtqn_with_positions_depends_on_order(rng):
    config = SMALL["dtqn"].model_copy(update={"readout": "mean"})
    params = init_parameters(config, rng)
    windows = rng.uniform(-1.0, 1.0, size=(3, 4, 2))
    order = [2, 0, 3, 1]

    shuffled = q_values(windows[:, order], params, config)

    assert np.max(np.abs(shuffled - q_values(windows, params, config))) > 1e-6
