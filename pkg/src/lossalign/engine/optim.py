"""First-order optimizers operating in place on parameter arrays."""

from __future__ import annotations

import numpy as np

from ..exceptions import ShapeError

__all__ = ["MomentumSGD", "RMSProp"]


def _check_grads(params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    if len(grads) != len(params):
        raise ShapeError(f"got {len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if np.shape(g) != p.shape:
            raise ShapeError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")


class MomentumSGD:
    """v <- m*v + g;  w <- w - lr*v."""

    def __init__(self, params: list[np.ndarray], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        _check_grads(self.params, grads)
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= self.lr * v


class RMSProp:
    """s <- rho*s + (1-rho)*g^2;  w <- w - lr*g/(sqrt(s)+eps)."""

    def __init__(self, params: list[np.ndarray], lr: float, rho: float = 0.9, eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.rho = float(rho)
        self.eps = float(eps)
        self.sq_avg = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        _check_grads(self.params, grads)
        for p, s, g in zip(self.params, self.sq_avg, grads):
            s *= self.rho
            s += (1.0 - self.rho) * np.asarray(g) ** 2
            p -= self.lr * g / (np.sqrt(s) + self.eps)
