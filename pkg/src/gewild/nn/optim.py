"""Plain stochastic gradient descent: fixed learning rate, no momentum."""

from __future__ import annotations

from ..errors import ConfigError, InternalError
from .layers import Parameter


class SGD:
    """p <- p - lr * grad for every non-frozen parameter, then zero all grads."""

    def __init__(self, params, lr: float):
        if lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {lr}")
        self.params: list[Parameter] = list(params)
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.frozen:
                continue
            if p.tensor.grad is None:
                raise InternalError(
                    f"parameter {p.name or '<unnamed>'} has no gradient; "
                    "was backward() run?"
                )
            p.tensor.data -= self.lr * p.tensor.grad
        self.zero_grad()

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None
