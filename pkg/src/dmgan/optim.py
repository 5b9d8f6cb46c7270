"""ADAM with bias correction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List

import numpy as np


class DivergenceError(FloatingPointError):
    """A gradient or loss went non-finite during training."""


@dataclass
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: List[np.ndarray], grads: List[np.ndarray], m: List[np.ndarray],
              v: List[np.ndarray], step: int, cfg: AdamConfig) -> None:
    """One in-place ADAM update. ``step`` is the 1-based count after this update."""
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for i, (p, g) in enumerate(zip(params, grads)):
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter #{i} (shape {p.shape}) at step {step}")
        m[i] *= b1
        m[i] += (1.0 - b1) * g
        v[i] *= b2
        v[i] += (1.0 - b2) * g * g
        p -= cfg.lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + cfg.eps)


class Adam:
    """Optimizer state over a fixed, named parameter list."""

    def __init__(self, named_params, cfg: AdamConfig = None):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.cfg = cfg or AdamConfig()
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        adam_step([p.data for p in self.params], grads, self.m, self.v, self.step_count, self.cfg)

    def state(self, prefix: str) -> Dict[str, np.ndarray]:
        out = {}
        for name, m, v in zip(self.names, self.m, self.v):
            out[f"{prefix}.m.{name}"] = m
            out[f"{prefix}.v.{name}"] = v
        out[f"{prefix}.step"] = np.array([self.step_count], dtype=np.float32)
        return out

    def load_state(self, prefix: str, entries: Dict[str, np.ndarray]):
        for i, name in enumerate(self.names):
            self.m[i] = entries[f"{prefix}.m.{name}"].astype(self.m[i].dtype).reshape(self.m[i].shape)
            self.v[i] = entries[f"{prefix}.v.{name}"].astype(self.v[i].dtype).reshape(self.v[i].shape)
        self.step_count = int(entries[f"{prefix}.step"][0])
