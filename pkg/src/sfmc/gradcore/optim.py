"""RMSProp parameter updates."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteGradient, ShapeMismatch
from .tensor import Tensor


def rmsprop_step(params, grads, state, lr, decay=0.9, eps=1e-8):
    """One RMSProp update: v <- decay*v + (1-decay)*g^2; p <- p - lr*g/(sqrt(v)+eps).

    params: dict name -> Tensor (updated in place)
    grads:  dict name -> ndarray (missing or None means zero gradient: no-op)
    state:  dict name -> ndarray running second moment (created on first use)

    Returns (params, state).  Raises NonFiniteGradient naming the offending
    parameter when a gradient contains NaN or inf.
    """
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            continue
        p = params[name]
        if g.shape != p.values.shape:
            raise ShapeMismatch(
                f"rmsprop_step: gradient {g.shape} vs parameter {p.values.shape} for '{name}'"
            )
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter '{name}'")
        v = state.get(name)
        if v is None:
            v = np.zeros_like(p.values)
        v = decay * v + (1.0 - decay) * g * g
        state[name] = v
        p.values = p.values - lr * g / (np.sqrt(v) + eps)
    return params, state


class RmsProp:
    """Stateful wrapper reading gradients off the parameter tensors."""

    def __init__(self, lr, decay=0.9, eps=1e-8):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.state = {}

    def step(self, params):
        grads = {}
        for name, p in params.items():
            if isinstance(p, Tensor) and p.grad is not None:
                grads[name] = p.grad
        rmsprop_step(params, grads, self.state, self.lr, self.decay, self.eps)

    def zero_grad(self, params):
        for p in params.values():
            p.grad = None
