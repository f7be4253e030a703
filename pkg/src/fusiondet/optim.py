"""Adam with decoupled weight decay and a stepped learning-rate schedule.

Weight decay multiplies parameters directly (it never enters the moment
estimates) and is applied only to tensors with two or more dimensions:
biases, gains, and scalar gates are left undecayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import ConfigError
from .params import ParamStore


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    milestones: tuple[int, ...] = (8, 11)  # epochs where lr drops
    decay_factor: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")
        if list(self.milestones) != sorted(self.milestones):
            raise ConfigError("milestones must be sorted")

    def lr_at_epoch(self, epoch: int) -> float:
        drops = sum(1 for m in self.milestones if epoch >= m)
        return self.lr * self.decay_factor ** drops


class AdamW:
    """Stateful optimizer over a ParamStore.

    step() consumes the gradients currently accumulated in the store
    (the caller zeroes them); parameter names are visited in sorted
    order so the update is a pure function of (state, grads).
    """

    def __init__(self, store: ParamStore, cfg: OptimConfig = OptimConfig()):
        self.store = store
        self.cfg = cfg
        self.t = 0
        self.m = {n: np.zeros_like(store.value(n)) for n in store.names()}
        self.v = {n: np.zeros_like(store.value(n)) for n in store.names()}

    def step(self, lr: float | None = None) -> None:
        if lr is None:
            lr = self.cfg.lr
        b1, b2 = self.cfg.betas
        self.t += 1
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name in sorted(self.m):
            g = self.store.grad(name)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p = self.store.value(name).copy()
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.cfg.eps)
            if p.ndim >= 2 and self.cfg.weight_decay:
                p -= lr * self.cfg.weight_decay * self.store.value(name)
            self.store.set_value(name, p)

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {n: a.copy() for n, a in self.m.items()},
            "v": {n: a.copy() for n, a in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        if set(state["m"]) != set(self.m) or set(state["v"]) != set(self.v):
            raise ConfigError("optimizer state does not match the store")
        self.t = int(state["t"])
        self.m = {n: np.array(a, dtype=np.float64) for n, a in
                  state["m"].items()}
        self.v = {n: np.array(a, dtype=np.float64) for n, a in
                  state["v"].items()}
