"""Adaptive-moment (Adam) parameter updates."""

import numpy as np


class Adam:
    """Adam with bias correction; frozen parameters are never touched."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            if not p.trainable or p.grad is None:
                continue
            g = p.grad
            m = self._m.get(p.name)
            if m is None:
                m = self._m[p.name] = np.zeros_like(p.data)
                self._v[p.name] = np.zeros_like(p.data)
            v = self._v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            mhat = m / (1.0 - b1**self.t)
            vhat = v / (1.0 - b2**self.t)
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype, copy=False)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
