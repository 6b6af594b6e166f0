from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from services.autodiff import Tensor

CHECKPOINT_MAGIC = b"PQL1"
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ParameterError(ValueError):
    """Raised for duplicate names or mismatched parameter sets."""


class OptimizerError(RuntimeError):
    """Raised when an optimizer step finds parameters without gradients."""


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files."""


class ParameterSet:
    """Named trainable tensors, iterated in insertion order."""

    def __init__(self, tensors: Optional[Mapping[str, Tensor]] = None):
        self._tensors: Dict[str, Tensor] = {}
        for name, tensor in (tensors or {}).items():
            self.register(name, tensor)

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._tensors:
            raise ParameterError(f"Duplicate parameter name: {name}")
        tensor.name = name
        self._tensors[name] = tensor
        return tensor

    def add(self, name: str, data: np.ndarray, *, requires_grad: bool = True) -> Tensor:
        return self.register(name, Tensor(data, requires_grad=requires_grad))

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: object) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def values(self) -> Iterator[Tensor]:
        return iter(self._tensors.values())

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def frozen_copy(self) -> "ParameterSet":
        """Value copy whose tensors never record gradients."""
        return ParameterSet(
            {name: Tensor(tensor.data, requires_grad=False) for name, tensor in self._tensors.items()}
        )


def copy_parameters(src: ParameterSet, dst: ParameterSet) -> None:
    """Overwrite ``dst`` values with ``src`` values and clear ``dst`` gradients."""
    if src.names() != dst.names():
        missing = sorted(set(src.names()) ^ set(dst.names()))
        raise ParameterError(f"Parameter names differ: {missing or 'order mismatch'}")
    for name, source in src.items():
        target = dst[name]
        if source.shape != target.shape:
            raise ParameterError(f"Shape mismatch for {name}: {source.shape} vs {target.shape}")
        target.data = source.data.copy()
        target.grad = None


@dataclass
class AdamState:
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: ParameterSet,
    lr: float,
    state: AdamState,
    *,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """Apply one Adam update in parameter order, then clear gradients."""
    missing = [name for name, tensor in params.items() if tensor.grad is None]
    if missing:
        raise OptimizerError(f"Parameters without gradients: {', '.join(missing)}")

    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, tensor in params.items():
        grad = tensor.grad
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        m = (1.0 - beta1) * grad if m is None else beta1 * m + (1.0 - beta1) * grad
        v = (1.0 - beta2) * grad * grad if v is None else beta2 * v + (1.0 - beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        tensor.data = tensor.data - lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        tensor.grad = None


# --- checkpoint codec ------------------------------------------------------------

def encode_checkpoint(params: ParameterSet) -> bytes:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(params))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_checkpoint(payload: bytes) -> ParameterSet:
    if payload[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"Bad checkpoint magic: {payload[:4]!r}")
    offset = 4

    def read(fmt: str) -> tuple:
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(payload):
            raise CheckpointError("Checkpoint is truncated")
        values = struct.unpack_from(fmt, payload, offset)
        offset += size
        return values

    (count,) = read("<I")
    params = ParameterSet()
    for _ in range(count):
        (name_length,) = read("<I")
        name = bytes(read(f"<{name_length}s")[0]).decode("utf-8")
        (rank,) = read("<I")
        dims = read(f"<{rank}I")
        values = read(f"<{int(np.prod(dims, dtype=np.int64))}d")
        params.add(name, np.array(values, dtype=np.float64).reshape(dims))
    if offset != len(payload):
        raise CheckpointError(f"Trailing bytes after {count} tensors")
    return params
