"""SGD with momentum and optional pruning-mask enforcement."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .errors import ContractError
from .tensor import Tensor


class SGD:
    """Heavy-ball SGD: ``v <- momentum * v + grad``, ``w <- w - lr * v``.

    When a mask mapping (parameter name -> 0/1 array) is passed to ``step``,
    masked entries of both the weight and its velocity are set to exactly
    ``+0.0`` after the update.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float, momentum: float = 0.0):
        if lr <= 0:
            raise ContractError(f"lr must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ContractError(f"momentum must be in [0, 1), got {momentum}")
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, mask=None):
        masks = _mask_dict(mask)
        missing = [n for n, p in self.params.items() if p.grad is None]
        if missing:
            raise ContractError(f"no gradient for: {', '.join(missing)}")
        for name, p in self.params.items():
            v = self.velocity[name]
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v
            m = masks.get(name)
            if m is not None:
                keep = m.astype(bool)
                p.data = np.where(keep, p.data, 0.0)
                self.velocity[name] = np.where(keep, v, 0.0)


def _mask_dict(mask) -> dict:
    if mask is None:
        return {}
    return dict(getattr(mask, "masks", mask))


def sgd_step(params: Mapping[str, Tensor], lr: float, momentum: float = 0.0, mask=None,
             velocity: dict | None = None) -> dict:
    """One functional SGD step; returns the (updated) velocity dict to carry forward."""
    opt = SGD(params, lr, momentum)
    if velocity is not None:
        opt.velocity.update({k: np.array(v, dtype=np.float64) for k, v in velocity.items()})
    opt.step(mask)
    return opt.velocity
