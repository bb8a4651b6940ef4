"""AMSgrad optimizer over plain name->array parameter dicts."""

from __future__ import annotations

import numpy as np

__all__ = ["AmsGrad"]


class AmsGrad:
    """AMSgrad without bias correction.

    Per step, for each parameter::

        m    = beta1 * m + (1 - beta1) * grad
        v    = beta2 * v + (1 - beta2) * grad**2
        vhat = max(vhat, v)            (elementwise, monotone)
        theta -= lr * m / (sqrt(vhat) + eps)
    """

    def __init__(self, params: dict, lr=1e-4, beta1=0.5, beta2=0.9,
                 eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.vhat = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        b1, b2 = self.beta1, self.beta2
        for key, theta in self.params.items():
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            vh = self.vhat[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            np.maximum(vh, v, out=vh)
            theta -= self.lr * m / (np.sqrt(vh) + self.eps)

    # -- persistence ----------------------------------------------------
    def state_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
            "eps": self.eps,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
            "vhat": {k: v.copy() for k, v in self.vhat.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.lr = state["lr"]
        self.beta1 = state["beta1"]
        self.beta2 = state["beta2"]
        self.eps = state["eps"]
        self.m = {k: np.asarray(v, dtype=np.float64).copy()
                  for k, v in state["m"].items()}
        self.v = {k: np.asarray(v, dtype=np.float64).copy()
                  for k, v in state["v"].items()}
        self.vhat = {k: np.asarray(v, dtype=np.float64).copy()
                     for k, v in state["vhat"].items()}
