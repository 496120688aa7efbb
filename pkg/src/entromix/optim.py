"""Gradient-based optimizers operating in place on model parameters.

Both optimizers keep per-parameter state (moments or momentum buffers)
keyed by position in the parameter list, delegate the arithmetic to the
compiled/NumPy kernels, and skip parameters whose gradient is absent.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .errors import DomainError
from .tensor import Tensor

__all__ = ["AdamW", "SGD"]


class _OptimizerBase:
    """Shared plumbing: parameter registration, grad clearing, state reset."""

    def __init__(self, params) -> None:
        self.params: list[Tensor] = list(params)
        if not self.params:
            raise DomainError("optimizer needs at least one parameter")
        for p in self.params:
            if not isinstance(p, Tensor):
                raise DomainError(f"optimizer parameters must be Tensors, got {type(p).__name__}")
            # The update kernels mutate flat views; a non-contiguous array
            # would silently receive no update through reshape(-1).
            if not p.data.flags["C_CONTIGUOUS"]:
                p.data = np.ascontiguousarray(p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def reset_state(self) -> None:
        """Discard all accumulated optimizer state (moments/buffers)."""
        raise NotImplementedError

    def step(self) -> None:
        raise NotImplementedError


class AdamW(_OptimizerBase):
    """Adaptive-moment estimation with decoupled weight decay."""

    def __init__(
        self,
        params,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-2,
    ) -> None:
        super().__init__(params)
        beta1, beta2 = float(betas[0]), float(betas[1])
        if not lr > 0:
            raise DomainError(f"lr must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise DomainError(f"betas must lie in [0, 1), got {betas}")
        if not eps > 0:
            raise DomainError(f"eps must be positive, got {eps}")
        if weight_decay < 0:
            raise DomainError(f"weight_decay must be non-negative, got {weight_decay}")
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self._m: list[np.ndarray | None] = [None] * len(self.params)
        self._v: list[np.ndarray | None] = [None] * len(self.params)
        self._steps: list[int] = [0] * len(self.params)

    def reset_state(self) -> None:
        self._m = [None] * len(self.params)
        self._v = [None] * len(self.params)
        self._steps = [0] * len(self.params)

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if self._m[i] is None:
                self._m[i] = np.zeros(p.data.size, dtype=p.dtype)
                self._v[i] = np.zeros(p.data.size, dtype=p.dtype)
            self._steps[i] += 1
            grad = np.ascontiguousarray(p.grad, dtype=p.dtype).reshape(-1)
            K.adamw_update(
                p.data.reshape(-1),
                grad,
                self._m[i],
                self._v[i],
                self._steps[i],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                self.weight_decay,
            )


class SGD(_OptimizerBase):
    """Stochastic gradient descent with classical momentum."""

    def __init__(self, params, lr: float = 1e-3, momentum: float = 0.9) -> None:
        super().__init__(params)
        if not lr > 0:
            raise DomainError(f"lr must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise DomainError(f"momentum must lie in [0, 1), got {momentum}")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self._buf: list[np.ndarray | None] = [None] * len(self.params)

    def reset_state(self) -> None:
        self._buf = [None] * len(self.params)

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            if self._buf[i] is None:
                self._buf[i] = np.zeros(p.data.size, dtype=p.dtype)
            grad = np.ascontiguousarray(p.grad, dtype=p.dtype).reshape(-1)
            K.sgd_momentum_update(p.data.reshape(-1), grad, self._buf[i], self.lr, self.momentum)
