"""Shared helpers for the test suite."""

from __future__ import annotations

import numpy as np

from lossalign.config import TrainRunConfig
from lossalign.data import DatasetSpec


def fd_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(x.size):
        orig = xf[i]
        xf[i] = orig + h
        up = f(x)
        xf[i] = orig - h
        down = f(x)
        xf[i] = orig
        flat[i] = (up - down) / (2.0 * h)
    return grad


def rel_error(approx: np.ndarray, exact: np.ndarray) -> float:
    """Worst relative error, guarded for near-zero exact entries."""
    approx = np.asarray(approx, dtype=np.float64).ravel()
    exact = np.asarray(exact, dtype=np.float64).ravel()
    scale = np.maximum(np.abs(exact), 1e-8)
    return float(np.max(np.abs(approx - exact) / scale))


def tiny_config(**overrides) -> TrainRunConfig:
    """A config small enough that a full run takes well under a second."""
    base = dict(
        dataset=DatasetSpec(
            "confusable-gaussians", num_classes=4, dim=6,
            n_train=64, n_val=48, n_test=48,
        ),
        inner_iters=10,
        total_steps=3,
        num_children=2,
        history=4,
        model_hidden=(8,),
        batch_size=8,
        eval_subsample=48,
    )
    base.update(overrides)
    return TrainRunConfig(**base)
