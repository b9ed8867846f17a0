"""Named collection of learnable tensors."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from gator.numerics.tensor import Tensor


class ModelParams:
    """Ordered name -> Tensor map. Insertion order is the canonical order."""

    def __init__(self):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        self.frozen: set[str] = set()

    def add(self, name: str, values) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(values, requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self) -> list[str]:
        return list(self._tensors)

    def tensors(self) -> list[Tensor]:
        return list(self._tensors.values())

    def trainable(self) -> list[Tensor]:
        return [t for n, t in self._tensors.items() if n not in self.frozen]

    def group(self, prefix: str) -> list[Tensor]:
        return [t for n, t in self._tensors.items() if n.startswith(prefix)]

    def count(self) -> int:
        return int(sum(t.values.size for t in self._tensors.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.values.copy() for n, t in self._tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(state)
        extra = set(state) - set(self._tensors)
        if missing or extra:
            raise KeyError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for n, t in self._tensors.items():
            arr = np.asarray(state[n], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{n}: shape {arr.shape} != {t.shape}")
            t.values = arr.copy()

    def copy(self) -> "ModelParams":
        other = ModelParams()
        for n, t in self._tensors.items():
            other.add(n, t.values.copy())
        other.frozen = set(self.frozen)
        return other


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_in, fan_out))
