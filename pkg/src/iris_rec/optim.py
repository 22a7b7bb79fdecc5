# Adaptive first-order optimizers over a dict of named numpy tensors.
# Both update the tensors in place; step() advances the shared timestep.

from __future__ import annotations

import numpy as np

__all__ = ["Adam", "Adagrad", "make_optimizer", "optimizer_step"]


class Adam:
    def __init__(self, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class Adagrad:
    def __init__(self, lr: float = 0.01, initial_accumulator: float = 0.0, eps: float = 1e-8):
        self.lr = lr
        self.initial_accumulator = initial_accumulator
        self.eps = eps
        self.acc: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
            if name not in self.acc:
                self.acc[name] = np.full_like(p, self.initial_accumulator)
            acc = self.acc[name]
            acc += g * g
            p -= self.lr * g / (np.sqrt(acc) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return Adam(lr)
    if name == "adagrad":
        return Adagrad(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state):
    """Functional form: returns (params, state) after one in-place update."""
    state.step(params, grads)
    return params, state
