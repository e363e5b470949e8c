from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MissingGradError(RuntimeError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Adam with bias correction over a fixed, ordered parameter list.

    Moment buffers are keyed by position in ``params`` so a state can be
    inspected or compared across runs.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        if len({id(p) for p in self.params}) != len(self.params):
            raise ValueError("duplicate parameter in optimizer")
        for p in self.params:
            if not p.requires_grad:
                raise ValueError(f"parameter {p.name or p} does not require grad")
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)


def adam_step(params, state):
    """One Adam update of every tensor in ``params``; clears their grads."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradError(f"parameter {i} ({p.name}) has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = p.grad
        m = state.m.get(i)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[i]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        state.m[i] = m
        state.v[i] = v
        update = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= update.astype(p.data.dtype, copy=False)
        p.grad = None
