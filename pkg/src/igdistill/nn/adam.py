"""Adam with bias correction; deterministic given inputs."""

import numpy as np


def adam_step(params, grads, state, lr=0.001, beta1=0.9, beta2=0.999,
              eps=1e-8):
    """One Adam update over name-keyed arrays; params mutated in place.

    state holds {"t", "m", "v"}; pass {} for the first step. Returns the
    updated state.
    """
    if not state:
        state = {"t": 0,
                 "m": {k: np.zeros_like(v) for k, v in params.items()},
                 "v": {k: np.zeros_like(v) for k, v in params.items()}}
    state["t"] += 1
    t = state["t"]
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match "
                             f"parameter {name!r} shape {p.shape}")
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        mhat = m / (1.0 - beta1 ** t)
        vhat = v / (1.0 - beta2 ** t)
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)
    return state


class Adam:
    """Optimizer over a model's named Param objects."""

    def __init__(self, named_params, lr=0.001, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self._params = dict(named_params)
        self._state = {}
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self):
        data = {k: p.data for k, p in self._params.items()}
        grads = {}
        for k, p in self._params.items():
            if p.grad is None:
                raise RuntimeError(f"parameter {k!r} has no gradient; run "
                                   "backward before step")
            grads[k] = p.grad
        self._state = adam_step(data, grads, self._state, lr=self.lr,
                                beta1=self.beta1, beta2=self.beta2,
                                eps=self.eps)

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None
