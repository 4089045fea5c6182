"""
Adam optimizer over named parameter tensors
"""
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from app.tensor.tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    """First/second moment estimates per parameter name and the step counter"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
    lr: float,
) -> None:
    """One bias-corrected Adam update, in place on each parameter's data"""
    state.t += 1
    correction1 = 1.0 - BETA1 ** state.t
    correction2 = 1.0 - BETA2 ** state.t
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = BETA1 * m + (1.0 - BETA1) * grad
        v = BETA2 * v + (1.0 - BETA2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        param.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + EPS)


class Adam:
    """Stateful wrapper: reads .grad from the parameters it was built with"""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3):
        self.params = dict(params)
        self.lr = lr
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, {name: p.grad for name, p in self.params.items()}, self.state, self.lr)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()
