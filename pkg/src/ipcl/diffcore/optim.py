"""Parameter update rules."""

from __future__ import annotations

import numpy as np

from ..errors import DomainError


class Optimizer:
    def __init__(self, params):
        self.params = [p for p in params if p.trainable]
        if not self.params:
            raise DomainError("optimizer needs at least one trainable parameter")

    def zero_grad(self):
        for p in self.params:
            p.value.grad = None

    def step(self):
        raise NotImplementedError


class SGD(Optimizer):
    """Momentum SGD. Weight decay joins the gradient before the velocity
    update: v <- mu*v + g + wd*p ; p <- p - lr*v."""

    def __init__(self, params, lr, momentum=0.0, weight_decay=0.0):
        super().__init__(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self._velocity = [np.zeros_like(p.value.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self._velocity):
            if p.value.grad is None:
                continue
            g = p.value.grad
            if self.weight_decay != 0.0:
                g = g + self.weight_decay * p.value.data
            v *= self.momentum
            v += g
            p.value.data -= self.lr * v


class Adam(Optimizer):
    """Adam with bias correction."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        super().__init__(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = [np.zeros_like(p.value.data) for p in self.params]
        self._v = [np.zeros_like(p.value.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.value.grad is None:
                continue
            g = p.value.grad
            if self.weight_decay != 0.0:
                g = g + self.weight_decay * p.value.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
