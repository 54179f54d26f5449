"""First-order optimizers. Only SGD with momentum is needed here."""

from typing import Mapping, Sequence

import numpy as np

from ..errors import ContractViolation
from .tensor import Tensor


class SGD:
    """SGD with classic (coupled) momentum and L2 weight decay.

    v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
    """

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        # slot shapes mirror parameter shapes
        self.velocity = {p.uid: np.zeros_like(p.data) for p in self.params}

    def step(self, grads: Mapping[int, Tensor] | Sequence) -> None:
        """Apply one update in place. `grads` is either a uid-keyed map (as
        returned by backward) or a sequence aligned with the params. Missing
        gradients are contract violations. Gradient buffers are cleared."""
        if isinstance(grads, Mapping):
            aligned = [grads.get(p.uid) for p in self.params]
        else:
            aligned = list(grads)
            if len(aligned) != len(self.params):
                raise ContractViolation(
                    f"optimizer: {len(aligned)} gradients for {len(self.params)} parameters"
                )
        for p, g in zip(self.params, aligned):
            if g is None:
                raise ContractViolation(f"optimizer: missing gradient for parameter uid={p.uid}")
            gd = g.data if isinstance(g, Tensor) else np.asarray(g)
            if gd.shape != p.data.shape:
                raise ContractViolation(f"optimizer: gradient shape {gd.shape} vs parameter {p.data.shape}")
            if self.weight_decay:
                gd = gd + self.weight_decay * p.data
            v = self.velocity[p.uid]
            v *= self.momentum
            v += gd
            p.data -= self.lr * v
            p.grad = None
