"""Named parameter storage with gradient slots.

Every learnable tensor in the pipeline lives in a ParamStore under a
dotted name ("stage0.heads.cls.0.w"). Forward passes read values,
backward passes accumulate into the matching grad slot. Iteration order
is insertion order and is deterministic, which keeps optimizer updates
and checkpoint layouts reproducible.
"""

from __future__ import annotations

import numpy as np


class ParamStore:
    """Ordered map name -> (value, grad), both float64 arrays of equal shape."""

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> str:
        if name in self._values:
            raise ValueError(f"duplicate parameter name: {name}")
        value = np.asarray(value, dtype=np.float64)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)
        return name

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values.keys())

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def set_value(self, name: str, value: np.ndarray) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._values[name].shape:
            raise ValueError(
                f"shape mismatch for {name}: {value.shape} vs {self._values[name].shape}"
            )
        self._values[name] = value

    def accumulate(self, name: str, grad: np.ndarray) -> None:
        g = self._grads[name]
        if np.shape(grad) != g.shape:
            raise ValueError(
                f"gradient shape mismatch for {name}: {np.shape(grad)} vs {g.shape}"
            )
        g += grad

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def grad_snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._grads.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self._values.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._values) - set(state)
        extra = set(state) - set(self._values)
        if missing or extra:
            raise ValueError(
                f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, value in state.items():
            self.set_value(name, value)


def xavier_uniform(rng: np.random.Generator, d_in: int, d_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, size=(d_in, d_out))
