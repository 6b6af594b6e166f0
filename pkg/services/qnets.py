"""Feed-forward, GRU and transformer-encoder Q-networks over observation windows.

A window is an array of shape ``(w, 2)`` holding (position, angle) pairs, oldest
first; a batch of windows has shape ``(B, w, 2)``. Every forward returns one
Q-value per action: shape ``(2,)`` for a single window, ``(B, 2)`` for a batch.

Parameter draw order (one uniform draw per weight element, row-major):

    dqn   fc1.weight, fc2.weight, head.weight
    drqn  embed.weight, gru.w_z, gru.u_z, gru.w_r, gru.u_r, gru.w_h, gru.u_h, head.weight
    dtqn  embed.weight, then per layer l: encoder{l}.attn.w_q, w_k, w_v, w_o,
          encoder{l}.ff1.weight, encoder{l}.ff2.weight; finally head.weight

Biases start at zero and layer-norm gains at one; neither consumes draws.
"""
from __future__ import annotations

import math
from typing import Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np

from models.schemas import ArchitectureConfig
from services import autodiff as ad
from services.autodiff import Tensor
from services.parameters import ParameterSet

OBSERVATION_DIM = 2
N_ACTIONS = 2

ParameterKind = Literal["weight", "bias", "gain"]


class QNetworkError(ValueError):
    """Raised for invalid windows or architecture settings."""


# --- observation windows ---------------------------------------------------------

def initial_window(observation: Sequence[float], length: int) -> np.ndarray:
    """Window at episode start: the first observation repeated ``length`` times."""
    row = np.asarray(observation, dtype=np.float64).reshape(1, OBSERVATION_DIM)
    return np.repeat(row, length, axis=0)


def advance_window(window: np.ndarray, observation: Sequence[float]) -> np.ndarray:
    row = np.asarray(observation, dtype=np.float64).reshape(1, OBSERVATION_DIM)
    return np.concatenate([window[1:], row], axis=0)


def _as_batch(windows: np.ndarray, config: ArchitectureConfig) -> Tuple[np.ndarray, bool]:
    array = np.asarray(windows, dtype=np.float64)
    single = array.ndim == 2
    if single:
        array = array[None]
    if array.ndim != 3 or array.shape[-1] != OBSERVATION_DIM:
        raise QNetworkError(f"Expected windows of shape (w, {OBSERVATION_DIM}) or (B, w, {OBSERVATION_DIM}), got {np.shape(windows)}")
    if array.shape[1] != config.window_length:
        raise QNetworkError(f"Expected window length {config.window_length}, got {array.shape[1]}")
    return array, single


def _finish(q: Tensor, single: bool) -> Tensor:
    return q[0] if single else q


# --- parameters --------------------------------------------------------------------

def parameter_layout(config: ArchitectureConfig) -> List[Tuple[str, Tuple[int, ...], ParameterKind]]:
    """Names, shapes and kinds in the order they are created and drawn."""
    layout: List[Tuple[str, Tuple[int, ...], ParameterKind]] = []

    def linear(prefix: str, fan_in: int, fan_out: int) -> None:
        layout.append((f"{prefix}.weight", (fan_in, fan_out), "weight"))
        layout.append((f"{prefix}.bias", (fan_out,), "bias"))

    if config.variant == "dqn":
        linear("fc1", OBSERVATION_DIM * config.window_length, config.hidden_dim)
        linear("fc2", config.hidden_dim, config.hidden_dim)
        linear("head", config.hidden_dim, N_ACTIONS)
    elif config.variant == "drqn":
        linear("embed", OBSERVATION_DIM, config.gru_input_dim)
        for gate in ("z", "r", "h"):
            layout.append((f"gru.w_{gate}", (config.gru_input_dim, config.gru_hidden_dim), "weight"))
            layout.append((f"gru.u_{gate}", (config.gru_hidden_dim, config.gru_hidden_dim), "weight"))
            layout.append((f"gru.b_{gate}", (config.gru_hidden_dim,), "bias"))
        linear("head", config.gru_hidden_dim, N_ACTIONS)
    elif config.variant == "dtqn":
        d = config.model_dim
        linear("embed", OBSERVATION_DIM, d)
        for layer in range(config.n_layers):
            prefix = f"encoder{layer}"
            for name in ("w_q", "w_k", "w_v", "w_o"):
                layout.append((f"{prefix}.attn.{name}", (d, d), "weight"))
            layout.append((f"{prefix}.attn.b_o", (d,), "bias"))
            layout.append((f"{prefix}.norm1.gain", (d,), "gain"))
            layout.append((f"{prefix}.norm1.bias", (d,), "bias"))
            linear(f"{prefix}.ff1", d, config.feedforward_dim)
            linear(f"{prefix}.ff2", config.feedforward_dim, d)
            layout.append((f"{prefix}.norm2.gain", (d,), "gain"))
            layout.append((f"{prefix}.norm2.bias", (d,), "bias"))
        linear("head", d, N_ACTIONS)
    else:  # pragma: no cover - guarded by the schema
        raise QNetworkError(f"Unsupported variant: {config.variant}")
    return layout


def init_parameters(config: ArchitectureConfig, rng: np.random.Generator) -> ParameterSet:
    """Weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)); biases 0; gains 1."""
    params = ParameterSet()
    for name, shape, kind in parameter_layout(config):
        if kind == "weight":
            bound = math.sqrt(1.0 / shape[0])
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "gain":
            data = np.ones(shape)
        else:
            data = np.zeros(shape)
        params.add(name, data)
    return params


def _linear(x: Tensor, params: ParameterSet, prefix: str) -> Tensor:
    return x @ params[f"{prefix}.weight"] + params[f"{prefix}.bias"]


# --- DQN ------------------------------------------------------------------------

def forward_dqn(windows: np.ndarray, params: ParameterSet, config: ArchitectureConfig) -> Tensor:
    batch, single = _as_batch(windows, config)
    x = Tensor(batch.reshape(batch.shape[0], -1))
    hidden = ad.relu(_linear(x, params, "fc1"))
    hidden = ad.relu(_linear(hidden, params, "fc2"))
    return _finish(_linear(hidden, params, "head"), single)


# --- DRQN -----------------------------------------------------------------------

def gru_cell(x: Tensor, h: Tensor, params: ParameterSet) -> Tensor:
    """One GRU update: h' = (1 - z) * h + z * tanh(x W_h + (r * h) U_h + b_h)."""
    z = ad.sigmoid(x @ params["gru.w_z"] + h @ params["gru.u_z"] + params["gru.b_z"])
    r = ad.sigmoid(x @ params["gru.w_r"] + h @ params["gru.u_r"] + params["gru.b_r"])
    candidate = ad.tanh(x @ params["gru.w_h"] + ad.mul(r, h) @ params["gru.u_h"] + params["gru.b_h"])
    return ad.mul(1.0 - z, h) + ad.mul(z, candidate)


def project_observations(batch: np.ndarray, params: ParameterSet) -> Tensor:
    return _linear(Tensor(batch), params, "embed")


def drqn_final_hidden(
    windows: np.ndarray,
    params: ParameterSet,
    config: ArchitectureConfig,
    initial: Optional[Tensor] = None,
) -> Tensor:
    """Unroll the GRU over windows of any length and return the last hidden state."""
    batch = np.asarray(windows, dtype=np.float64)
    if batch.ndim == 2:
        batch = batch[None]
    projected = project_observations(batch, params)
    h = initial if initial is not None else Tensor(np.zeros((batch.shape[0], config.gru_hidden_dim)))
    for t in range(batch.shape[1]):
        h = gru_cell(projected[:, t, :], h, params)
    return h


def forward_drqn(windows: np.ndarray, params: ParameterSet, config: ArchitectureConfig) -> Tensor:
    batch, single = _as_batch(windows, config)
    h = drqn_final_hidden(batch, params, config)
    return _finish(_linear(h, params, "head"), single)


# --- DTQN -----------------------------------------------------------------------

def sinusoidal_positional_encoding(length: int, dim: int) -> np.ndarray:
    position = np.arange(length, dtype=np.float64)[:, None]
    div_term = np.exp(np.arange(0, dim, 2, dtype=np.float64) * -(math.log(10000.0) / dim))
    encoding = np.zeros((length, dim))
    encoding[:, 0::2] = np.sin(position * div_term)
    encoding[:, 1::2] = np.cos(position * div_term[: dim // 2])
    return encoding


def multi_head_self_attention(
    x: Tensor,
    params: ParameterSet,
    prefix: str,
    n_heads: int,
    weights_out: Optional[List[np.ndarray]] = None,
) -> Tensor:
    """Unmasked scaled dot-product self-attention over ``x`` of shape (w, d) or (B, w, d).

    When ``weights_out`` is given, each head's attention weights are appended to it.
    """
    model_dim = x.shape[-1]
    if model_dim % n_heads != 0:
        raise QNetworkError(f"model_dim {model_dim} is not divisible by n_heads {n_heads}")
    head_dim = model_dim // n_heads
    queries = x @ params[f"{prefix}.w_q"]
    keys = x @ params[f"{prefix}.w_k"]
    values = x @ params[f"{prefix}.w_v"]
    leading = (slice(None),) * (x.ndim - 1)

    heads = []
    for head in range(n_heads):
        columns = leading + (slice(head * head_dim, (head + 1) * head_dim),)
        q, k, v = queries[columns], keys[columns], values[columns]
        scores = ad.scale(q @ ad.transpose(k), 1.0 / math.sqrt(head_dim))
        attention = ad.softmax_rows(scores)
        if weights_out is not None:
            weights_out.append(attention.numpy())
        heads.append(attention @ v)
    merged = heads[0] if n_heads == 1 else ad.concat(heads, axis=-1)
    return merged @ params[f"{prefix}.w_o"] + params[f"{prefix}.b_o"]


def encoder_block(
    x: Tensor,
    params: ParameterSet,
    prefix: str,
    config: ArchitectureConfig,
    weights_out: Optional[List[np.ndarray]] = None,
) -> Tensor:
    attended = multi_head_self_attention(x, params, f"{prefix}.attn", config.n_heads, weights_out)
    x = ad.layer_norm(x + attended, params[f"{prefix}.norm1.gain"], params[f"{prefix}.norm1.bias"], config.layer_norm_eps)
    hidden = ad.relu(_linear(x, params, f"{prefix}.ff1"))
    x = ad.layer_norm(
        x + _linear(hidden, params, f"{prefix}.ff2"),
        params[f"{prefix}.norm2.gain"],
        params[f"{prefix}.norm2.bias"],
        config.layer_norm_eps,
    )
    return x


def forward_dtqn(
    windows: np.ndarray,
    params: ParameterSet,
    config: ArchitectureConfig,
    weights_out: Optional[List[np.ndarray]] = None,
) -> Tensor:
    if config.model_dim % config.n_heads != 0:
        raise QNetworkError(f"model_dim {config.model_dim} is not divisible by n_heads {config.n_heads}")
    batch, single = _as_batch(windows, config)
    x = project_observations(batch, params)
    if config.positional_encoding:
        x = x + Tensor(sinusoidal_positional_encoding(config.window_length, config.model_dim))
    for layer in range(config.n_layers):
        x = encoder_block(x, params, f"encoder{layer}", config, weights_out)
    if config.readout == "mean":
        features = ad.mean(x, axis=1)
    else:
        features = x[:, -1, :]
    return _finish(_linear(features, params, "head"), single)


# --- dispatch -------------------------------------------------------------------

_FORWARDS = {"dqn": forward_dqn, "drqn": forward_drqn, "dtqn": forward_dtqn}


def forward(windows: np.ndarray, params: ParameterSet, config: ArchitectureConfig) -> Tensor:
    return _FORWARDS[config.variant](windows, params, config)


def q_values(windows: np.ndarray, params: ParameterSet, config: ArchitectureConfig) -> np.ndarray:
    """Forward pass without graph recording."""
    with ad.no_grad():
        return forward(windows, params, config).numpy()


def count_parameters(configs: Iterable[ArchitectureConfig]) -> dict[str, int]:
    return {
        config.variant: sum(int(np.prod(shape)) for _, shape, _ in parameter_layout(config))
        for config in configs
    }
