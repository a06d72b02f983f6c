"""AdamW with decoupled weight decay and a linear warm-up / linear decay schedule."""

import math
from typing import Callable, Dict, Tuple

import numpy as np

from .ndiff import Graph

NO_DECAY_SUFFIXES = (".gamma", ".beta", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")


def decays(name: str) -> bool:
    """Layer-norm parameters and bias vectors are not decayed."""
    return not name.endswith(NO_DECAY_SUFFIXES)


def linear_warmup_decay(step: int, total_steps: int, warmup_ratio: float, peak: float) -> float:
    """Learning rate for the update taken at (0-based) ``step``.

    Rises linearly from 0 to ``peak`` over ``ceil(warmup_ratio * total_steps)``
    steps, then falls linearly to 0 at ``total_steps``.
    """
    warmup = math.ceil(warmup_ratio * total_steps)
    if step < warmup:
        return peak * step / warmup
    return peak * max(0.0, (total_steps - step) / max(1, total_steps - warmup))


class AdamW:
    """Adam on the registered parameters of a graph, with multiplicative weight decay.

    Decay is applied before the adaptive update: theta <- theta * (1 - lr * wd).
    """

    def __init__(
        self,
        graph: Graph,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        decay_filter: Callable[[str], bool] = decays,
    ):
        self.graph = graph
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_filter = decay_filter
        self.t = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in graph.params.items()}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in graph.params.items()}

    def step(self, lr: float):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, param in self.graph.params.items():
            grad = param.grad if param.grad is not None else np.zeros_like(param.data)
            if self.weight_decay and self.decay_filter(name):
                param.data *= 1.0 - lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
