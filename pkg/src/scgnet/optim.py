"""Adam and SGD with momentum over named parameters."""

from __future__ import annotations

import numpy as np


class Optimizer:
    slots: tuple[str, ...] = ()

    def __init__(self, named_params, lr):
        self.params = dict(named_params)
        self.lr = lr
        self.t = 0
        self.state = {slot: {k: np.zeros_like(p.data) for k, p in self.params.items()} for slot in self.slots}

    def step(self):
        self.t += 1
        for name, p in self.params.items():
            if p.grad is not None:
                self._update(name, p, p.grad.astype(p.data.dtype, copy=False))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_arrays(self):
        for slot in self.slots:
            for name, arr in self.state[slot].items():
                yield f"{slot}/{name}", arr

    def load_state(self, t, arrays):
        self.t = int(t)
        for key, arr in arrays.items():
            slot, name = key.split("/", 1)
            self.state[slot][name] = arr.astype(self.params[name].data.dtype)


class Adam(Optimizer):
    slots = ("m", "v")

    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        super().__init__(named_params, lr)
        self.b1, self.b2 = betas
        self.eps = eps

    def _update(self, name, p, g):
        m = self.state["m"][name] = self.b1 * self.state["m"][name] + (1 - self.b1) * g
        v = self.state["v"][name] = self.b2 * self.state["v"][name] + (1 - self.b2) * g * g
        m_hat = m / (1 - self.b1 ** self.t)
        v_hat = v / (1 - self.b2 ** self.t)
        p.data = (p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


class SGD(Optimizer):
    slots = ("velocity",)

    def __init__(self, named_params, lr=1e-2, momentum=0.9):
        super().__init__(named_params, lr)
        self.momentum = momentum

    def _update(self, name, p, g):
        v = self.state["velocity"][name] = self.momentum * self.state["velocity"][name] + g
        p.data = (p.data - self.lr * v).astype(p.data.dtype)


def make_optimizer(kind, named_params, lr, momentum=0.9):
    if kind == "adam":
        return Adam(named_params, lr=lr)
    if kind == "sgd":
        return SGD(named_params, lr=lr, momentum=momentum)
    raise ValueError(f"unknown optimizer {kind!r}")
