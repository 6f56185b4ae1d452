"""First-order optimizers over :class:`~ram.nncore.Param` collections.

Each ``step`` reads ``p.grad``, updates ``p.value`` in place and then clears
the gradients.
"""

from __future__ import annotations

from typing import Iterable, List

import numpy as np

from .nncore import Param

OPTIMIZERS = ("sgd", "adam", "adagrad", "adadelta", "rmsprop")


class Optimizer:
    def __init__(self, params: Iterable[Param], lr: float):
        self.params: List[Param] = list(params)
        self.lr = lr
        self.t = 0

    def _zeros(self):
        return [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            self._update(i, p)
            p.grad[...] = 0.0

    def _update(self, i, p):
        raise NotImplementedError

    def accumulators(self) -> List[List[np.ndarray]]:
        """Per-parameter state buffers, one list per kind of accumulator."""
        return []


class SGD(Optimizer):
    def _update(self, i, p):
        p.value -= self.lr * p.grad


class Adam(Optimizer):
    def __init__(self, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m, self.v = self._zeros(), self._zeros()

    def _update(self, i, p):
        g = p.grad
        self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
        self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
        m_hat = self.m[i] / (1.0 - self.b1 ** self.t)
        v_hat = self.v[i] / (1.0 - self.b2 ** self.t)
        p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def accumulators(self):
        return [self.m, self.v]


class AdaGrad(Optimizer):
    def __init__(self, params, lr=1e-2, eps=1e-8):
        super().__init__(params, lr)
        self.eps = eps
        self.sq = self._zeros()

    def _update(self, i, p):
        self.sq[i] += p.grad * p.grad
        p.value -= self.lr * p.grad / (np.sqrt(self.sq[i]) + self.eps)

    def accumulators(self):
        return [self.sq]


class AdaDelta(Optimizer):
    """Zeiler's AdaDelta; ``lr`` scales the unit-corrected step (1.0 is the original rule)."""

    def __init__(self, params, lr=1.0, rho=0.95, eps=1e-6):
        super().__init__(params, lr)
        self.rho, self.eps = rho, eps
        self.sq, self.dx = self._zeros(), self._zeros()

    def _update(self, i, p):
        g = p.grad
        self.sq[i] = self.rho * self.sq[i] + (1.0 - self.rho) * g * g
        delta = np.sqrt(self.dx[i] + self.eps) / np.sqrt(self.sq[i] + self.eps) * g
        self.dx[i] = self.rho * self.dx[i] + (1.0 - self.rho) * delta * delta
        p.value -= self.lr * delta

    def accumulators(self):
        return [self.sq, self.dx]


class RMSProp(Optimizer):
    def __init__(self, params, lr=1e-3, rho=0.9, eps=1e-8):
        super().__init__(params, lr)
        self.rho, self.eps = rho, eps
        self.sq = self._zeros()

    def _update(self, i, p):
        self.sq[i] = self.rho * self.sq[i] + (1.0 - self.rho) * p.grad * p.grad
        p.value -= self.lr * p.grad / (np.sqrt(self.sq[i]) + self.eps)

    def accumulators(self):
        return [self.sq]


_KINDS = {"sgd": SGD, "adam": Adam, "adagrad": AdaGrad, "adadelta": AdaDelta, "rmsprop": RMSProp}


def make_optimizer(kind: str, params: Iterable[Param], lr: float) -> Optimizer:
    try:
        cls = _KINDS[kind.lower()]
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}; choose from {', '.join(OPTIMIZERS)}") from None
    return cls(params, lr=lr)


def decay_lr(lr: float, decay: float) -> float:
    return lr * decay
